// Copyright 2026 The chanprune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

namespace chanprune {

struct BisectionOptions {
  /// Stop as soon as |f(mid)| <= value_tolerance (set negative to disable).
  double value_tolerance = -1.0;
  /// Stop once hi - lo <= x_tolerance * max(1, |hi|).
  double x_tolerance = 1e-12;
  int max_iters = 200;
};

struct BisectionState {
  int iteration = 0;
  double lo = 0.0, hi = 0.0;
  double f_lo = 0.0, f_hi = 0.0;
};

struct BisectionResult {
  /// Last midpoint that met value_tolerance, otherwise lo.
  double x = 0.0;
  double f_x = 0.0;
  BisectionState bracket;
  int iterations = 0;
  bool met_value_tolerance = false;
};

/// Bisection on a nondecreasing function with f(lo) <= 0 < f(hi) (the
/// caller establishes the bracket). The bracket invariant is preserved at
/// every step; `observe` sees the bracket after each update.
template <class F>
BisectionResult bisect_nondecreasing(F&& f, double lo, double hi, double f_lo, double f_hi,
                                     const BisectionOptions& options,
                                     const std::function<void(const BisectionState&)>& observe = {}) {
  BisectionResult result;
  BisectionState st{0, lo, hi, f_lo, f_hi};
  while (st.iteration < options.max_iters) {
    const double mid = 0.5 * (st.lo + st.hi);
    if (mid <= st.lo || mid >= st.hi) break;
    const double f_mid = f(mid);
    ++st.iteration;
    if (options.value_tolerance >= 0.0 && std::fabs(f_mid) <= options.value_tolerance) {
      result.x = mid;
      result.f_x = f_mid;
      result.met_value_tolerance = true;
      result.bracket = st;
      result.iterations = st.iteration;
      return result;
    }
    if (f_mid <= 0.0) {
      st.lo = mid;
      st.f_lo = f_mid;
    } else {
      st.hi = mid;
      st.f_hi = f_mid;
    }
    if (observe) observe(st);
    if (st.hi - st.lo <= options.x_tolerance * std::max(1.0, std::fabs(st.hi))) break;
  }
  result.x = st.lo;
  result.f_x = st.f_lo;
  result.bracket = st;
  result.iterations = st.iteration;
  return result;
}

}  // namespace chanprune
