// Copyright 2026 The Cascade Authors. All Rights Reserved.
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

#include "cascade/checkpoint.hpp"
#include "cascade/config.hpp"
#include "cascade/data.hpp"
#include "cascade/error.hpp"
#include "cascade/evaluate.hpp"
#include "cascade/io.hpp"
#include "cascade/model.hpp"
#include "cascade/nn.hpp"
#include "cascade/oracle.hpp"
#include "cascade/reinforce.hpp"
#include "cascade/rng.hpp"
#include "cascade/stopping.hpp"
#include "cascade/tensor.hpp"
