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

// Hamming-ranking retrieval metrics.
//
// A database item is relevant to a query when the two share at least one
// label. Rankings sort by ascending Hamming distance, ties by ascending
// database index.
//
//   AP@k  = sum_{i <= k} Prec(i) * rel(i) / min(R, k)      (0 when R = 0)
//   P@k   = relevant in top k / k
//   P@H<=r: precision among items within radius r, 0 when none are
//   P-R   : micro-averaged over all (query, item) pairs, one point per
//           threshold t = 0..d_b

#ifndef NSH_METRICS_H_
#define NSH_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nsh/hashcore.h"
#include "nsh/pipeline.h"

namespace nsh {

struct RetrievalRun {
  PackedCodes db_codes;
  PackedCodes query_codes;
  LabelMatrix db_labels;
  LabelMatrix query_labels;

  // Throws ShapeError on mismatched code widths, label widths or counts.
  void validate() const;
};

struct PrPoint {
  std::size_t threshold = 0;
  double recall = 0.0;
  double precision = 0.0;
};

struct MetricReport {
  std::size_t k = 0;
  double map_at_k = 0.0;
  std::vector<std::pair<std::size_t, double>> p_at_k;  // (cutoff, precision)
  double p_at_hamming_r2 = 0.0;
  std::vector<PrPoint> pr_curve;

  double precision_at(std::size_t cutoff) const;
};

std::vector<std::size_t> rank_by_hamming(std::span<const std::uint64_t> query,
                                         const PackedCodes& db);

// `relevance` is in ranked order. Throws ParameterError if k == 0.
double average_precision_at_k(std::span<const std::uint8_t> relevance,
                              std::size_t k, std::size_t total_relevant);

// k beyond the database size is truncated to it.
double map_at_k(const RetrievalRun& run, std::size_t k);
double precision_at_k(const RetrievalRun& run, std::size_t k);
double precision_at_hamming_radius(const RetrievalRun& run, int r = 2);
std::vector<PrPoint> pr_curve(const RetrievalRun& run);

// Precision cutoffs reported alongside mAP@k: 1, 5, 10, 20, 50, 100, ... up
// to and including k.
std::vector<std::size_t> precision_cutoffs(std::size_t k);

MetricReport evaluate(const RetrievalRun& run, std::size_t k);

// `map@K=`, `p@K=`, `p@h2=` lines with 6 decimals, after a `#` header that
// states the AP convention.
void write_metric_report(std::ostream& out, const MetricReport& report);
// Header `hamming_threshold,recall,precision`.
void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& curve);

}  // namespace nsh

#endif  // NSH_METRICS_H_
