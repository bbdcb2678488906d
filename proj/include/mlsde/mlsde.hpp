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

#include "mlsde/analytic_scores.hpp"
#include "mlsde/errors.hpp"
#include "mlsde/eval.hpp"
#include "mlsde/io.hpp"
#include "mlsde/prior.hpp"
#include "mlsde/process.hpp"
#include "mlsde/rng.hpp"
#include "mlsde/schedule.hpp"
#include "mlsde/score_model.hpp"
#include "mlsde/solver.hpp"
#include "mlsde/toy_model.hpp"
#include "mlsde/types.hpp"
#include "mlsde/version.hpp"
