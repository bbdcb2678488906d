// Copyright 2026 The mlsde Authors
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

#include <functional>

#include "mlsde/types.hpp"

namespace mlsde {

/// Score evaluator s(x, t): maps a batch (one point per row) at a common
/// time t to a batch of score vectors of the same shape. Must be safe for
/// concurrent read-only use.
using ScoreFn = std::function<Matrix(const Matrix& x, double t)>;

}  // namespace mlsde
