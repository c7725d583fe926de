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

#include "nsh/cli.h"

#include <CLI11.hpp>
#include <fstream>
#include <ostream>
#include <string>

#include "nsh/errors.h"
#include "nsh/experiment.h"
#include "nsh/metrics.h"
#include "nsh/model.h"
#include "nsh/pipeline.h"

namespace nsh {
namespace {

struct TrainArgs {
  std::string features;
  std::string labels;
  std::string config;
  std::string out;
  std::string history;
};

struct EncodeArgs {
  std::string ckpt;
  std::string features;
  std::string out;
};

struct EvalArgs {
  std::string db_codes;
  std::string query_codes;
  std::string db_labels;
  std::string query_labels;
  std::size_t k = 100;
  std::string pr_out;
};

struct AblateArgs {
  std::string variant;
  std::string db_features;
  std::string db_labels;
  std::string query_features;
  std::string query_labels;
  std::string config;
  std::size_t k = 100;
  std::string pr_out;
  std::string ckpt_out;
};

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
};

RunConfig ConfigOrDefault(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  cfg.validate();
  return cfg;
}

void WritePr(const std::string& path, const std::vector<PrPoint>& curve) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing", 0);
  write_pr_csv(out, curve);
}

int RunTrain(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = ConfigOrDefault(a.config);
  Dataset data;
  data.features = load_features(a.features);
  data.splits.assign(data.features.rows(), Split::kTrain);
  if (!a.labels.empty()) {
    LabelMatrix labels = load_labels(a.labels);
    if (labels.size() != data.features.rows()) {
      throw ShapeError("train: " + std::to_string(data.features.rows()) +
                       " feature rows but " + std::to_string(labels.size()) +
                       " label rows");
    }
    data.labels = std::move(labels);
  }
  const TrainResult result = train(data, cfg);
  save_checkpoint(a.out, result.params);
  if (!a.history.empty()) {
    std::ofstream h(a.history);
    if (!h) throw FormatError("cannot open " + a.history + " for writing", 0);
    write_loss_history(h, result.history);
  }
  out << "steps=" << result.history.size() << "\n";
  if (!result.history.empty())
    out << "final_loss=" << result.history.back().loss << "\n";
  out << "checkpoint=" << a.out << "\n";
  return kExitOk;
}

int RunEncode(const EncodeArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.ckpt);
  const Mat features = load_features(a.features);
  const PackedCodes codes = encode_codes(params, features);
  save_packed_codes(a.out, codes);
  out << "items=" << codes.size() << "\nbits=" << codes.bits() << "\n";
  return kExitOk;
}

int RunEval(const EvalArgs& a, std::ostream& out) {
  RetrievalRun run;
  run.db_codes = load_packed_codes(a.db_codes);
  run.query_codes = load_packed_codes(a.query_codes);
  run.db_labels = load_labels(a.db_labels);
  run.query_labels = load_labels(a.query_labels);
  const MetricReport report = evaluate(run, a.k);
  write_metric_report(out, report);
  WritePr(a.pr_out, report.pr_curve);
  return kExitOk;
}

int RunAblate(const AblateArgs& a, std::ostream& out) {
  RunConfig cfg = ConfigOrDefault(a.config);
  cfg.variant = ParseVariant(a.variant);
  cfg.validate();
  RetrievalData data{load_features(a.db_features), load_labels(a.db_labels),
                     load_features(a.query_features),
                     load_labels(a.query_labels)};
  const ExperimentResult result = run_experiment(data, cfg, a.k);
  out << "variant=" << VariantName(cfg.variant) << "\n";
  write_metric_report(out, result.report);
  WritePr(a.pr_out, result.report.pr_curve);
  if (!a.ckpt_out.empty()) save_checkpoint(a.ckpt_out, result.training.params);
  return kExitOk;
}

int RunSynth(const SynthArgs& a, std::ostream& out) {
  const Dataset ds = synth_clusters(a.cfg);
  const Dataset db = ds.subset(Split::kDatabase);
  save_features(a.out + ".db.nshf", db.features);
  save_labels(a.out + ".db.nshl", *db.labels);
  out << "database=" << db.features.rows() << "\n";
  if (a.cfg.query_per_cluster > 0) {
    const Dataset queries = ds.subset(Split::kQuery);
    save_features(a.out + ".query.nshf", queries.features);
    save_labels(a.out + ".query.nshl", *queries.labels);
    out << "queries=" << queries.features.rows() << "\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Learning to hash with differentiable sorting"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train an encoder");
  train_cmd->add_option("--features", train_args.features, "NSHF or CSV")
      ->required();
  train_cmd->add_option("--labels", train_args.labels, "NSHL or CSV (unused)");
  train_cmd->add_option("--config", train_args.config, "key=value file");
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--history", train_args.history, "loss CSV path");

  EncodeArgs encode_args;
  auto* encode_cmd = app.add_subcommand("encode", "write packed codes");
  encode_cmd->add_option("--ckpt", encode_args.ckpt)->required();
  encode_cmd->add_option("--features", encode_args.features)->required();
  encode_cmd->add_option("--out", encode_args.out)->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics");
  eval_cmd->add_option("--db-codes", eval_args.db_codes)->required();
  eval_cmd->add_option("--query-codes", eval_args.query_codes)->required();
  eval_cmd->add_option("--db-labels", eval_args.db_labels)->required();
  eval_cmd->add_option("--query-labels", eval_args.query_labels)->required();
  eval_cmd->add_option("--k", eval_args.k)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--pr-out", eval_args.pr_out);

  AblateArgs ablate_args;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train, encode and evaluate one variant");
  ablate_cmd->add_option("--variant", ablate_args.variant)->required();
  ablate_cmd->add_option("--db-features", ablate_args.db_features)->required();
  ablate_cmd->add_option("--db-labels", ablate_args.db_labels)->required();
  ablate_cmd->add_option("--query-features", ablate_args.query_features)
      ->required();
  ablate_cmd->add_option("--query-labels", ablate_args.query_labels)
      ->required();
  ablate_cmd->add_option("--config", ablate_args.config);
  ablate_cmd->add_option("--k", ablate_args.k)->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--pr-out", ablate_args.pr_out);
  ablate_cmd->add_option("--ckpt-out", ablate_args.ckpt_out);

  SynthArgs synth_args;
  synth_args.cfg.query_per_cluster = 10;
  auto* synth_cmd = app.add_subcommand("synth", "Gaussian cluster benchmark");
  synth_cmd->add_option("--k", synth_args.cfg.k);
  synth_cmd->add_option("--per-cluster", synth_args.cfg.per_cluster);
  synth_cmd->add_option("--query-per-cluster", synth_args.cfg.query_per_cluster);
  synth_cmd->add_option("--dx", synth_args.cfg.d_x);
  synth_cmd->add_option("--center-stddev", synth_args.cfg.center_stddev);
  synth_cmd->add_option("--cluster-stddev", synth_args.cfg.cluster_stddev);
  synth_cmd->add_option("--seed", synth_args.cfg.seed);
  synth_cmd->add_option("--out", synth_args.out, "output path prefix")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train_cmd) return RunTrain(train_args, out);
    if (*encode_cmd) return RunEncode(encode_args, out);
    if (*eval_cmd) return RunEval(eval_args, out);
    if (*ablate_cmd) return RunAblate(ablate_args, out);
    if (*synth_cmd) return RunSynth(synth_args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace nsh
