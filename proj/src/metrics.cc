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

#include "nsh/metrics.h"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

#include "nsh/errors.h"

namespace nsh {
namespace {

std::vector<std::uint8_t> RankedRelevance(const RetrievalRun& run,
                                          std::size_t q,
                                          const std::vector<std::size_t>& rank,
                                          std::size_t* total_relevant) {
  std::vector<std::uint8_t> rel(rank.size());
  std::size_t total = 0;
  for (std::size_t pos = 0; pos < rank.size(); ++pos) {
    rel[pos] = run.query_labels.shares_label(q, run.db_labels, rank[pos]);
    total += rel[pos];
  }
  if (total_relevant) *total_relevant = total;
  return rel;
}

std::string Fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void RetrievalRun::validate() const {
  if (db_codes.bits() != query_codes.bits()) {
    throw ShapeError("code length mismatch: database codes have " +
                     std::to_string(db_codes.bits()) +
                     " bits, query codes have " +
                     std::to_string(query_codes.bits()));
  }
  if (db_labels.width() != query_labels.width()) {
    throw ShapeError("label width mismatch: database " +
                     std::to_string(db_labels.width()) + ", query " +
                     std::to_string(query_labels.width()));
  }
  if (db_labels.size() != db_codes.size()) {
    throw ShapeError("database has " + std::to_string(db_codes.size()) +
                     " codes but " + std::to_string(db_labels.size()) +
                     " label rows");
  }
  if (query_labels.size() != query_codes.size()) {
    throw ShapeError("queries have " + std::to_string(query_codes.size()) +
                     " codes but " + std::to_string(query_labels.size()) +
                     " label rows");
  }
}

double MetricReport::precision_at(std::size_t cutoff) const {
  for (const auto& [c, p] : p_at_k)
    if (c == cutoff) return p;
  throw ParameterError("no precision recorded at cutoff " +
                       std::to_string(cutoff));
}

std::vector<std::size_t> rank_by_hamming(std::span<const std::uint64_t> query,
                                         const PackedCodes& db) {
  if (query.size() != db.words_per_item()) {
    throw ShapeError("rank_by_hamming: query spans " +
                     std::to_string(query.size()) + " words, database items " +
                     std::to_string(db.words_per_item()));
  }
  // Counting sort on distance keeps equal distances in index order.
  std::vector<std::vector<std::size_t>> buckets(db.bits() + 1);
  for (std::size_t j = 0; j < db.size(); ++j)
    buckets[hamming_packed(query, db.item(j))].push_back(j);
  std::vector<std::size_t> order;
  order.reserve(db.size());
  for (const auto& b : buckets) order.insert(order.end(), b.begin(), b.end());
  return order;
}

double average_precision_at_k(std::span<const std::uint8_t> relevance,
                              std::size_t k, std::size_t total_relevant) {
  if (k == 0) throw ParameterError("average_precision_at_k: k must be >= 1");
  if (total_relevant == 0) return 0.0;
  const std::size_t depth = std::min(k, relevance.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(total_relevant, k));
}

double map_at_k(const RetrievalRun& run, std::size_t k) {
  run.validate();
  if (k == 0) throw ParameterError("map_at_k: k must be >= 1");
  if (run.query_codes.size() == 0) return 0.0;
  const std::size_t depth = std::min(k, run.db_codes.size());
  double total = 0.0;
  for (std::size_t q = 0; q < run.query_codes.size(); ++q) {
    const auto rank = rank_by_hamming(run.query_codes.item(q), run.db_codes);
    std::size_t relevant = 0;
    const auto rel = RankedRelevance(run, q, rank, &relevant);
    total += depth == 0 ? 0.0 : average_precision_at_k(rel, depth, relevant);
  }
  return total / static_cast<double>(run.query_codes.size());
}

double precision_at_k(const RetrievalRun& run, std::size_t k) {
  run.validate();
  if (k == 0) throw ParameterError("precision_at_k: k must be >= 1");
  const std::size_t depth = std::min(k, run.db_codes.size());
  if (run.query_codes.size() == 0 || depth == 0) return 0.0;
  double total = 0.0;
  for (std::size_t q = 0; q < run.query_codes.size(); ++q) {
    const auto rank = rank_by_hamming(run.query_codes.item(q), run.db_codes);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i)
      hits += run.query_labels.shares_label(q, run.db_labels, rank[i]);
    total += static_cast<double>(hits) / static_cast<double>(depth);
  }
  return total / static_cast<double>(run.query_codes.size());
}

double precision_at_hamming_radius(const RetrievalRun& run, int r) {
  run.validate();
  if (r < 0) throw ParameterError("precision_at_hamming_radius: r must be >= 0");
  if (run.query_codes.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t q = 0; q < run.query_codes.size(); ++q) {
    std::size_t retrieved = 0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < run.db_codes.size(); ++j) {
      if (hamming_packed(run.query_codes.item(q), run.db_codes.item(j)) > r)
        continue;
      ++retrieved;
      hits += run.query_labels.shares_label(q, run.db_labels, j);
    }
    if (retrieved > 0)
      total += static_cast<double>(hits) / static_cast<double>(retrieved);
  }
  return total / static_cast<double>(run.query_codes.size());
}

std::vector<PrPoint> pr_curve(const RetrievalRun& run) {
  run.validate();
  const std::size_t bits = run.db_codes.bits();
  // Histogram pairs by distance, split by relevance, then accumulate.
  std::vector<std::size_t> all(bits + 1, 0), relevant(bits + 1, 0);
  std::size_t total_relevant = 0;
  for (std::size_t q = 0; q < run.query_codes.size(); ++q) {
    for (std::size_t j = 0; j < run.db_codes.size(); ++j) {
      const int d = hamming_packed(run.query_codes.item(q), run.db_codes.item(j));
      const bool rel = run.query_labels.shares_label(q, run.db_labels, j);
      ++all[d];
      relevant[d] += rel;
      total_relevant += rel;
    }
  }
  std::vector<PrPoint> curve;
  curve.reserve(bits + 1);
  std::size_t retrieved = 0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t <= bits; ++t) {
    retrieved += all[t];
    hits += relevant[t];
    PrPoint pt;
    pt.threshold = t;
    pt.recall = total_relevant == 0 ? 0.0
                                    : static_cast<double>(hits) /
                                          static_cast<double>(total_relevant);
    pt.precision = retrieved == 0 ? 0.0
                                  : static_cast<double>(hits) /
                                        static_cast<double>(retrieved);
    curve.push_back(pt);
  }
  return curve;
}

std::vector<std::size_t> precision_cutoffs(std::size_t k) {
  std::vector<std::size_t> cutoffs;
  for (std::size_t base = 1; base < k; base *= 10) {
    for (std::size_t mult : {1, 2, 5}) {
      const std::size_t c = base * mult;
      if (c < k && (c != 2 || base != 1)) cutoffs.push_back(c);
    }
  }
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());
  if (k > 0) cutoffs.push_back(k);
  return cutoffs;
}

MetricReport evaluate(const RetrievalRun& run, std::size_t k) {
  run.validate();
  MetricReport report;
  report.k = k;
  report.map_at_k = map_at_k(run, k);
  for (std::size_t c : precision_cutoffs(k))
    report.p_at_k.emplace_back(c, precision_at_k(run, c));
  report.p_at_hamming_r2 = precision_at_hamming_radius(run, 2);
  report.pr_curve = pr_curve(run);
  return report;
}

void write_metric_report(std::ostream& out, const MetricReport& report) {
  out << "# ap@k=sum(prec(i)*rel(i))/min(R,k); relevance=shared label; "
         "ties=ascending db index\n";
  out << "map@" << report.k << "=" << Fixed6(report.map_at_k) << "\n";
  for (const auto& [c, p] : report.p_at_k)
    out << "p@" << c << "=" << Fixed6(p) << "\n";
  out << "p@h2=" << Fixed6(report.p_at_hamming_r2) << "\n";
}

void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& curve) {
  out << "hamming_threshold,recall,precision\n";
  for (const auto& pt : curve)
    out << pt.threshold << ',' << Fixed6(pt.recall) << ','
        << Fixed6(pt.precision) << '\n';
}

}  // namespace nsh
