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

#include "nsh/pipeline.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "nsh/errors.h"

namespace nsh {
namespace {

TEST(AugmentTest, IdentityWithoutNoiseOrMask) {
  Rng rng(61);
  const Mat x = gaussian_batch(rng, 4, 5, 0.0, 1.0);
  EXPECT_EQ(augment(x, AugmentConfig{0.0, 0.0}, rng), x);
}

TEST(AugmentTest, MaskFraction) {
  Rng rng(62);
  const Mat x(1000, 100, 1.0);
  const Mat y = augment(x, AugmentConfig{0.0, 0.5}, rng);
  const double zeroed =
      static_cast<double>(std::count(y.values().begin(), y.values().end(), 0.0)) /
      static_cast<double>(y.size());
  EXPECT_GE(zeroed, 0.48);
  EXPECT_LE(zeroed, 0.52);
}

TEST(AugmentTest, DeterministicAndIndependentStreams) {
  const Rng root(63);
  const Mat x(3, 4, 1.0);
  Rng a = root.split(0), b = root.split(0), c = root.split(1);
  const AugmentConfig cfg;
  const Mat va = augment(x, cfg, a);
  EXPECT_EQ(va, augment(x, cfg, b));
  EXPECT_NE(va, augment(x, cfg, c));
}

TEST(AugmentTest, Validation) {
  EXPECT_THROW((AugmentConfig{-0.1, 0.0}).validate(), ParameterError);
  EXPECT_THROW((AugmentConfig{0.1, 1.0}).validate(), ParameterError);
  EXPECT_NO_THROW((AugmentConfig{0.0, 0.99}).validate());
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  Rng rng(64);
  ModelParams params = ModelParams::Init(3, {4}, 2, 2, rng);
  const ModelParams before = params;
  AdamState state = AdamState::Init(params, AdamConfig{});
  adam_step(params, params.zeros_like(), state);
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Rng rng(65);
  ModelParams params = ModelParams::Init(3, {4}, 2, 2, rng);
  const auto before = params.flatten();
  GradientSet grads = params.zeros_like();
  std::vector<double> g(params.num_values());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i % 2 ? 1.0 : -1.0) * (0.5 + i);
  grads.unflatten(g);
  AdamConfig cfg;
  cfg.lr = 0.01;
  AdamState state = AdamState::Init(params, cfg);
  adam_step(params, grads, state);
  const auto after = params.flatten();
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(after[i] - before[i], g[i] > 0 ? -0.01 : 0.01, 1e-9);
  }
}

TEST(AdamTest, IdenticalTrajectoriesAndShapeCheck) {
  Rng rng(66);
  const ModelParams init = ModelParams::Init(3, {4}, 2, 2, rng);
  ModelParams a = init, b = init;
  AdamState sa = AdamState::Init(a, AdamConfig{}), sb = AdamState::Init(b, AdamConfig{});
  for (int step = 0; step < 5; ++step) {
    GradientSet g = init.zeros_like();
    std::vector<double> v(g.num_values());
    for (double& x : v) x = rng.normal();
    g.unflatten(v);
    adam_step(a, g, sa);
    adam_step(b, g, sb);
  }
  EXPECT_EQ(a, b);
  Rng other(1);
  EXPECT_THROW(adam_step(a, ModelParams::Init(3, {5}, 2, 2, other), sa), ShapeError);
}

TEST(RunConfigTest, ParseEveryKey) {
  std::istringstream in(
      "# comment\n"
      "d_b=32\nd_z=8\nhidden=64,32\nbatch=20\nepochs=3\nseed=9\n"
      "lr=0.01\nbeta1=0.8\nbeta2=0.99\nadam_eps=1e-6\n"
      "variant=hard_sort\nm=3\ntau_c=0.2\ntau_s=0.5\n"
      "noise_stddev=0.05\nmask_prob=0.1\n");
  const RunConfig cfg = parse_run_config(in);
  EXPECT_EQ(cfg.d_b, 32u);
  EXPECT_EQ(cfg.d_z, 8u);
  EXPECT_EQ(cfg.hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(cfg.batch, 20u);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.adam.lr, 0.01);
  EXPECT_EQ(cfg.adam.beta1, 0.8);
  EXPECT_EQ(cfg.adam.beta2, 0.99);
  EXPECT_EQ(cfg.adam.eps, 1e-6);
  EXPECT_EQ(cfg.variant, Variant::kHardSort);
  EXPECT_EQ(cfg.m, 3u);
  EXPECT_EQ(cfg.tau_c, 0.2);
  EXPECT_EQ(cfg.tau_s, 0.5);
  EXPECT_EQ(cfg.augment.noise_stddev, 0.05);
  EXPECT_EQ(cfg.augment.mask_prob, 0.1);
}

TEST(RunConfigTest, DefaultSoftsortTemperatureIsCodeLength) {
  RunConfig cfg;
  EXPECT_EQ(cfg.variant_config().tau_s, 16.0);
  cfg.d_b = 24;
  EXPECT_EQ(cfg.variant_config().tau_s, 24.0);
  std::istringstream in("tau_s=auto\nhidden=none\n");
  const RunConfig parsed = parse_run_config(in);
  EXPECT_FALSE(parsed.tau_s.has_value());
  EXPECT_TRUE(parsed.hidden.empty());
}

TEST(RunConfigTest, WriteThenParseRoundTrips) {
  RunConfig cfg;
  cfg.hidden = {7, 5};
  cfg.tau_s = 0.125;
  cfg.adam.lr = 3.0e-4;
  cfg.variant = Variant::kMultilabelNce;
  std::stringstream buf;
  write_run_config(buf, cfg);
  const RunConfig back = parse_run_config(buf);
  std::stringstream again;
  write_run_config(again, back);
  EXPECT_EQ(buf.str(), again.str());
  EXPECT_EQ(back.tau_s, 0.125);
  EXPECT_EQ(back.adam.lr, 3.0e-4);
}

TEST(RunConfigTest, ErrorsCarryLineOffsets) {
  std::istringstream unknown("d_b=8\ncolour=red\n");
  try {
    parse_run_config(unknown);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }
  std::istringstream bad_number("lr=fast\n");
  EXPECT_THROW(parse_run_config(bad_number), FormatError);
  std::istringstream no_equals("epochs\n");
  EXPECT_THROW(parse_run_config(no_equals), FormatError);
  std::istringstream bad_variant("variant=decoder\n");
  EXPECT_THROW(parse_run_config(bad_variant), FormatError);
}

TEST(RunConfigTest, Validation) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.m = cfg.batch;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = RunConfig{};
  cfg.batch = 1;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = RunConfig{};
  cfg.d_b = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(EpochOrderTest, AlwaysAPermutation) {
  Rng rng(67);
  for (std::size_t count : {1u, 2u, 17u, 500u}) {
    auto order = epoch_order(count, rng);
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> expected(count);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(order, expected);
  }
}

Dataset SmallClusters(std::size_t per_cluster, std::uint64_t seed) {
  SynthConfig sc;
  sc.per_cluster = per_cluster;
  sc.d_x = 16;
  sc.seed = seed;
  Dataset ds = synth_clusters(sc);
  return ds;
}

RunConfig SmallRun() {
  RunConfig cfg;
  cfg.hidden = {32};
  cfg.d_b = 8;
  cfg.d_z = 16;
  cfg.batch = 10;
  cfg.epochs = 2;
  cfg.seed = 4;
  return cfg;
}

TEST(TrainTest, ZeroEpochsReturnsInitialParameters) {
  const Dataset ds = SmallClusters(5, 1);
  RunConfig cfg = SmallRun();
  cfg.epochs = 0;
  const TrainResult r = train(ds, cfg);
  EXPECT_TRUE(r.history.empty());
  Rng init = Rng(cfg.seed).split(1);
  EXPECT_EQ(r.params, ModelParams::Init(16, cfg.hidden, 8, 16, init));
}

TEST(TrainTest, DropsPartialBatchAndIsDeterministic) {
  const Dataset ds = SmallClusters(5, 2);  // 50 rows
  RunConfig cfg = SmallRun();
  cfg.batch = 15;
  const TrainResult a = train(ds, cfg);
  const TrainResult b = train(ds, cfg);
  EXPECT_EQ(a.batches_per_epoch, 3u);
  EXPECT_EQ(a.history.size(), 6u);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].step, i);
  }
}

TEST(TrainTest, TenStepLossSequenceIsBitwiseReproducible) {
  const Dataset ds = SmallClusters(10, 3);  // 100 rows, 10 batches
  const RunConfig cfg = SmallRun();
  const TrainResult a = train(ds, cfg);
  const TrainResult b = train(ds, cfg);
  ASSERT_GE(a.history.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].l_sorted, b.history[i].l_sorted);
    EXPECT_EQ(a.history[i].l_r, b.history[i].l_r);
  }
}

TEST(TrainTest, DroppingQuantizationRemovesExactlyThatTermAtStepZero) {
  const Dataset ds = SmallClusters(5, 4);
  RunConfig cfg = SmallRun();
  cfg.epochs = 1;
  const TrainResult full = train(ds, cfg);
  cfg.variant = Variant::kNoQuant;
  const TrainResult nq = train(ds, cfg);
  EXPECT_NEAR(full.history[0].loss - nq.history[0].loss, full.history[0].l_r,
              1e-12);
  EXPECT_EQ(nq.history[0].l_r, 0.0);
}

TEST(TrainTest, LossFallsOnClusterBenchmark) {
  SynthConfig sc;  // 10 clusters of 100, d_x = 64
  const Dataset ds = synth_clusters(sc);
  RunConfig cfg;  // library defaults, 30 epochs
  const TrainResult r = train(ds, cfg);
  const std::size_t per_epoch = r.batches_per_epoch;
  ASSERT_EQ(r.history.size(), 30 * per_epoch);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5 * per_epoch; ++i) {
    first += r.history[i].loss;
    last += r.history[r.history.size() - 1 - i].loss;
  }
  EXPECT_LT(last, first);
}

TEST(TrainTest, UsesTrainRowsThenDatabaseRows) {
  SynthConfig sc;
  sc.per_cluster = 6;
  sc.query_per_cluster = 2;
  sc.d_x = 4;
  const Dataset ds = synth_clusters(sc);
  EXPECT_EQ(ds.training_features().rows(), 40u);
  Dataset tagged = ds;
  tagged.splits[0] = Split::kTrain;
  EXPECT_EQ(tagged.training_features().rows(), 1u);
}

TEST(SynthTest, LabelsCountsAndQueries) {
  SynthConfig sc;
  sc.k = 4;
  sc.per_cluster = 7;
  sc.query_per_cluster = 2;
  sc.d_x = 5;
  const Dataset ds = synth_clusters(sc);
  ASSERT_TRUE(ds.labels.has_value());
  EXPECT_EQ(ds.features.rows(), 28u);
  std::vector<std::size_t> per_class(4, 0);
  for (std::size_t i = 0; i < 28; ++i) {
    const auto row = ds.labels->row(i);
    EXPECT_EQ(std::accumulate(row.begin(), row.end(), 0), 1);
    for (std::size_t c = 0; c < 4; ++c) per_class[c] += row[c];
  }
  EXPECT_EQ(per_class, (std::vector<std::size_t>{7, 7, 7, 7}));
  EXPECT_EQ(ds.rows_in(Split::kQuery).size(), 8u);
  EXPECT_EQ(ds.subset(Split::kDatabase).features.rows(), 20u);
  EXPECT_EQ(synth_clusters(sc).features, ds.features);
  sc.seed = 1;
  EXPECT_NE(synth_clusters(sc).features, ds.features);
}

TEST(SynthTest, DegenerateClustersCollapse) {
  SynthConfig sc;
  sc.k = 2;
  sc.per_cluster = 5;
  sc.d_x = 8;
  sc.cluster_stddev = 1e-12;
  const Dataset ds = synth_clusters(sc);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      if (ds.labels->shares_label(i, *ds.labels, j)) {
        double d = 0.0;
        for (std::size_t c = 0; c < 8; ++c)
          d += std::abs(ds.features(i, c) - ds.features(j, c));
        EXPECT_LT(d, 1e-9);
      }
    }
  }
  sc.cluster_stddev = 0.0;
  EXPECT_THROW(synth_clusters(sc), ParameterError);
  sc.cluster_stddev = 1.0;
  sc.k = 1;
  EXPECT_THROW(synth_clusters(sc), ParameterError);
}

TEST(SynthTest, WellSeparatedByNearestCentroid) {
  SynthConfig sc;  // k = 10, d_x = 64, center 1, cluster 0.15
  const Dataset ds = synth_clusters(sc);
  const std::size_t n = ds.features.rows(), d = ds.features.cols();
  Mat centroid(sc.k, d);
  std::vector<std::size_t> label(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = ds.labels->row(i);
    label[i] = static_cast<std::size_t>(std::find(row.begin(), row.end(), 1) - row.begin());
    for (std::size_t c = 0; c < d; ++c)
      centroid(label[i], c) += ds.features(i, c) / static_cast<double>(sc.per_cluster);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < sc.k; ++k) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = ds.features(i, c) - centroid(k, c);
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = k;
      }
    }
    correct += best == label[i];
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(n), 0.99);
}

TEST(LabelMatrixTest, SharesAndSelect) {
  LabelMatrix a(2, 3), b(2, 3);
  a.row(0)[0] = 1;
  a.row(1)[2] = 1;
  b.row(0)[2] = 1;
  b.row(1)[1] = 1;
  EXPECT_FALSE(a.shares_label(0, b, 0));
  EXPECT_TRUE(a.shares_label(1, b, 0));
  EXPECT_FALSE(a.shares_label(1, b, 1));
  const LabelMatrix s = a.select({1});
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.row(0)[2], 1);
}

TEST(FeatureIoTest, BinaryRoundTripAtSinglePrecision) {
  Rng rng(68);
  const Mat x = gaussian_batch(rng, 6, 7, 0.0, 1.0);
  std::stringstream buf;
  write_features(buf, x);
  EXPECT_EQ(buf.str().size(), 4u + 4 + 8 + 8 + 6 * 7 * 4);
  const Mat back = read_features(buf, "mem");
  ASSERT_EQ(back.rows(), 6u);
  ASSERT_EQ(back.cols(), 7u);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(x.values()[i])));
}

TEST(FeatureIoTest, TruncationNamesExpectedAndActual) {
  std::stringstream buf;
  write_features(buf, Mat(3, 3, 1.0));
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 5));
  try {
    read_features(cut, "mem");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("36"), std::string::npos) << msg;
    EXPECT_NE(msg.find("31"), std::string::npos) << msg;
  }
}

TEST(FeatureIoTest, CsvParsingAndErrors) {
  std::istringstream ok("1.0,2.0\n3.0,4.0\n");
  EXPECT_EQ(read_features(ok, "mem"), (Mat{{1, 2}, {3, 4}}));
  std::istringstream ragged("1,2\n3\n");
  EXPECT_THROW(read_features(ragged, "mem"), FormatError);
  std::istringstream nan("1,nan\n");
  EXPECT_THROW(read_features(nan, "mem"), FormatError);
  std::istringstream junk("1,abc\n");
  try {
    read_features(junk, "mem");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 2u);
  }
}

TEST(FeatureIoTest, NonFiniteBinaryValue) {
  std::stringstream buf;
  write_features(buf, Mat(1, 2, 1.0));
  std::string bytes = buf.str();
  const float inf = INFINITY;
  std::memcpy(bytes.data() + 24 + 4, &inf, 4);
  std::stringstream in(bytes);
  try {
    read_features(in, "mem");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 28u);
  }
}

TEST(LabelIoTest, BinaryAndCsv) {
  LabelMatrix l(3, 4);
  l.row(0)[1] = 1;
  l.row(2)[3] = 1;
  l.row(2)[0] = 1;
  std::stringstream buf;
  write_labels(buf, l);
  EXPECT_EQ(buf.str().substr(0, 4), "NSHL");
  EXPECT_EQ(buf.str().size(), 4u + 8 + 4 + 12);
  EXPECT_EQ(read_labels(buf, "mem"), l);

  std::istringstream csv("0,1,0,0\n0,0,0,0\n1,0,0,1\n");
  EXPECT_EQ(read_labels(csv, "mem"), l);

  std::string bytes;
  {
    std::stringstream b2;
    write_labels(b2, l);
    bytes = b2.str();
  }
  bytes[16] = 2;
  std::stringstream bad(bytes);
  try {
    read_labels(bad, "mem");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
}

TEST(LossHistoryTest, Header) {
  std::ostringstream out;
  write_loss_history(out, {{0, 1.5, 1.0, 0.5}});
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "step,loss,l_sorted,l_r");
}

}  // namespace
}  // namespace nsh
