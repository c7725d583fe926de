// Copyright 2026 The nshash Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef NSH_EXPERIMENT_H_
#define NSH_EXPERIMENT_H_

#include <cstddef>

#include "nsh/metrics.h"
#include "nsh/pipeline.h"

namespace nsh {

struct RetrievalData {
  Mat db_features;
  LabelMatrix db_labels;
  Mat query_features;
  LabelMatrix query_labels;

  // Database rows of a tagged dataset become the database, kQuery rows the
  // queries. Requires labels.
  static RetrievalData FromDataset(const Dataset& ds);
};

struct ExperimentResult {
  TrainResult training;
  RetrievalRun run;
  MetricReport report;
};

// Trains on the database features (labels unused), encodes both sides and
// evaluates at cutoff k.
ExperimentResult run_experiment(const RetrievalData& data, const RunConfig& cfg,
                                std::size_t k);

}  // namespace nsh

#endif  // NSH_EXPERIMENT_H_
