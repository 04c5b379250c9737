#pragma once

namespace ctof {

/// Global worker count honored by every parallel kernel. 0 restores the OpenMP default.
void set_thread_count(int n);
int thread_count();

}  // namespace ctof
