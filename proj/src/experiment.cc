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

#include "nsh/experiment.h"

#include "nsh/errors.h"

namespace nsh {

RetrievalData RetrievalData::FromDataset(const Dataset& ds) {
  if (!ds.labels) throw ShapeError("RetrievalData: dataset has no labels");
  const Dataset db = ds.subset(Split::kDatabase);
  const Dataset queries = ds.subset(Split::kQuery);
  return RetrievalData{db.features, *db.labels, queries.features,
                       *queries.labels};
}

ExperimentResult run_experiment(const RetrievalData& data, const RunConfig& cfg,
                                std::size_t k) {
  if (data.db_features.rows() != data.db_labels.size() ||
      data.query_features.rows() != data.query_labels.size()) {
    throw ShapeError("run_experiment: feature and label row counts differ");
  }
  Dataset train_set;
  train_set.features = data.db_features;
  train_set.splits.assign(data.db_features.rows(), Split::kTrain);

  ExperimentResult result;
  result.training = train(train_set, cfg);
  result.run.db_codes = encode_codes(result.training.params, data.db_features);
  result.run.query_codes =
      encode_codes(result.training.params, data.query_features);
  result.run.db_labels = data.db_labels;
  result.run.query_labels = data.query_labels;
  result.report = evaluate(result.run, k);
  return result;
}

}  // namespace nsh
