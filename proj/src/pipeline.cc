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

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "binio.h"
#include "nsh/errors.h"

namespace nsh {

bool LabelMatrix::shares_label(std::size_t i, const LabelMatrix& other,
                               std::size_t j) const {
  auto a = row(i);
  auto b = other.row(j);
  const std::size_t w = std::min(a.size(), b.size());
  for (std::size_t c = 0; c < w; ++c)
    if (a[c] && b[c]) return true;
  return false;
}

LabelMatrix LabelMatrix::select(const std::vector<std::size_t>& rows) const {
  LabelMatrix out(rows.size(), width_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::vector<std::size_t> Dataset::rows_in(Split split) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) rows.push_back(i);
  return rows;
}

namespace {

Mat SelectRows(const Mat& m, const std::vector<std::size_t>& rows) {
  Mat out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

Dataset Dataset::subset(Split split) const {
  const auto rows = rows_in(split);
  Dataset out;
  out.features = SelectRows(features, rows);
  if (labels) out.labels = labels->select(rows);
  out.splits.assign(rows.size(), split);
  return out;
}

Mat Dataset::training_features() const {
  auto rows = rows_in(Split::kTrain);
  if (rows.empty()) rows = rows_in(Split::kDatabase);
  return SelectRows(features, rows);
}

void AugmentConfig::validate() const {
  if (!(noise_stddev >= 0.0))
    throw ParameterError("noise_stddev must be >= 0");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0))
    throw ParameterError("mask_prob must lie in [0, 1)");
}

Mat augment(const Mat& x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Mat out = x;
  if (cfg.noise_stddev > 0.0)
    for (double& v : out.values()) v += cfg.noise_stddev * rng.normal();
  if (cfg.mask_prob > 0.0)
    for (double& v : out.values())
      if (rng.uniform() < cfg.mask_prob) v = 0.0;
  return out;
}

AdamState AdamState::Init(const ModelParams& params, const AdamConfig& cfg) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0, cfg};
}

void adam_step(ModelParams& params, const GradientSet& grads,
               AdamState& state) {
  auto p_layers = params.layers();
  auto g_layers = grads.layers();
  auto m_layers = state.first.layers();
  auto v_layers = state.second.layers();
  if (g_layers.size() != p_layers.size() || m_layers.size() != p_layers.size())
    throw ShapeError("adam_step: layer count mismatch");
  for (std::size_t l = 0; l < p_layers.size(); ++l) {
    if (g_layers[l]->weight.rows() != p_layers[l]->weight.rows() ||
        g_layers[l]->weight.cols() != p_layers[l]->weight.cols() ||
        g_layers[l]->bias.size() != p_layers[l]->bias.size() ||
        m_layers[l]->weight.size() != p_layers[l]->weight.size()) {
      throw ShapeError("adam_step: gradient layer " + std::to_string(l) + " " +
                       g_layers[l]->weight.shape_str() +
                       " does not match parameter " +
                       p_layers[l]->weight.shape_str());
    }
  }
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  };
  for (std::size_t l = 0; l < p_layers.size(); ++l) {
    update(p_layers[l]->weight.values(), g_layers[l]->weight.values(),
           m_layers[l]->weight.values(), v_layers[l]->weight.values());
    update(p_layers[l]->bias, g_layers[l]->bias, m_layers[l]->bias,
           v_layers[l]->bias);
  }
}

VariantConfig RunConfig::variant_config() const {
  return VariantConfig{variant, m, tau_c,
                       tau_s.value_or(static_cast<double>(d_b))};
}

void RunConfig::validate() const {
  if (d_b < 1) throw ParameterError("d_b must be >= 1");
  if (d_z < 1) throw ParameterError("d_z must be >= 1");
  if (batch < 2) throw ParameterError("batch must be >= 2");
  for (std::size_t h : hidden)
    if (h == 0) throw ParameterError("hidden widths must be positive");
  if (!(adam.lr > 0.0)) throw ParameterError("lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ParameterError("adam_eps must be positive");
  variant_config().validate(batch);
  augment.validate();
}

namespace {

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double ParseDouble(const std::string& text, const std::string& what,
                   std::uint64_t offset) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    throw FormatError(what + ": cannot parse \"" + text + "\" as a number",
                      offset);
  if (!std::isfinite(v))
    throw FormatError(what + ": non-finite value \"" + text + "\"", offset);
  return v;
}

std::uint64_t ParseUnsigned(const std::string& text, const std::string& what,
                            std::uint64_t offset) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (text.empty() || text[0] == '-' || end != text.c_str() + text.size() ||
      errno == ERANGE)
    throw FormatError(what + ": cannot parse \"" + text +
                          "\" as a non-negative integer",
                      offset);
  return v;
}

std::vector<std::size_t> ParseWidths(const std::string& text,
                                     const std::string& what,
                                     std::uint64_t offset) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(ParseUnsigned(Trim(item), what, offset));
  return out;
}

std::string JoinWidths(const std::vector<std::size_t>& widths) {
  if (widths.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t here = offset;
    offset += line.size() + 1;
    std::string body = line.substr(0, line.find('#'));
    body = Trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw FormatError("config: expected key=value, got \"" + body + "\"",
                        here);
    const std::string key = Trim(body.substr(0, eq));
    const std::string value = Trim(body.substr(eq + 1));
    const std::string what = "config key " + key;
    if (key == "d_b") cfg.d_b = ParseUnsigned(value, what, here);
    else if (key == "d_z") cfg.d_z = ParseUnsigned(value, what, here);
    else if (key == "hidden") cfg.hidden = ParseWidths(value, what, here);
    else if (key == "batch") cfg.batch = ParseUnsigned(value, what, here);
    else if (key == "epochs") cfg.epochs = ParseUnsigned(value, what, here);
    else if (key == "seed") cfg.seed = ParseUnsigned(value, what, here);
    else if (key == "lr") cfg.adam.lr = ParseDouble(value, what, here);
    else if (key == "beta1") cfg.adam.beta1 = ParseDouble(value, what, here);
    else if (key == "beta2") cfg.adam.beta2 = ParseDouble(value, what, here);
    else if (key == "adam_eps") cfg.adam.eps = ParseDouble(value, what, here);
    else if (key == "m") cfg.m = ParseUnsigned(value, what, here);
    else if (key == "tau_c") cfg.tau_c = ParseDouble(value, what, here);
    else if (key == "tau_s") {
      if (value == "auto") cfg.tau_s.reset();
      else cfg.tau_s = ParseDouble(value, what, here);
    } else if (key == "noise_stddev") {
      cfg.augment.noise_stddev = ParseDouble(value, what, here);
    } else if (key == "mask_prob") {
      cfg.augment.mask_prob = ParseDouble(value, what, here);
    } else if (key == "variant") {
      try {
        cfg.variant = ParseVariant(value);
      } catch (const ParameterError& err) {
        throw FormatError(std::string("config: ") + err.what(), here);
      }
    } else {
      throw FormatError("config: unknown key \"" + key + "\"", here);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path, 0);
  return parse_run_config(in);
}

void write_run_config(std::ostream& out, const RunConfig& cfg) {
  out << std::setprecision(17);
  out << "d_b=" << cfg.d_b << "\n"
      << "d_z=" << cfg.d_z << "\n"
      << "hidden=" << JoinWidths(cfg.hidden) << "\n"
      << "batch=" << cfg.batch << "\n"
      << "epochs=" << cfg.epochs << "\n"
      << "seed=" << cfg.seed << "\n"
      << "lr=" << cfg.adam.lr << "\n"
      << "beta1=" << cfg.adam.beta1 << "\n"
      << "beta2=" << cfg.adam.beta2 << "\n"
      << "adam_eps=" << cfg.adam.eps << "\n"
      << "variant=" << VariantName(cfg.variant) << "\n"
      << "m=" << cfg.m << "\n"
      << "tau_c=" << cfg.tau_c << "\n";
  if (cfg.tau_s) out << "tau_s=" << *cfg.tau_s << "\n";
  else out << "tau_s=auto\n";
  out << "noise_stddev=" << cfg.augment.noise_stddev << "\n"
      << "mask_prob=" << cfg.augment.mask_prob << "\n";
}

std::vector<std::size_t> epoch_order(std::size_t count, Rng& rng) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  for (std::size_t i = count; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

TrainResult train(const Dataset& data, const RunConfig& cfg) {
  cfg.validate();
  const Mat features = data.training_features();
  if (features.rows() == 0) throw ParameterError("train: no training rows");
  if (features.rows() < cfg.batch) {
    throw ParameterError("train: " + std::to_string(features.rows()) +
                         " training rows cannot fill one batch of " +
                         std::to_string(cfg.batch));
  }
  const VariantConfig vcfg = cfg.variant_config();
  const Rng root(cfg.seed);
  Rng init_rng = root.split(1);
  Rng shuffle_rng = root.split(2);
  const Rng augment_root = root.split(3);

  TrainResult result;
  result.params = ModelParams::Init(features.cols(), cfg.hidden, cfg.d_b,
                                    cfg.d_z, init_rng);
  AdamState adam = AdamState::Init(result.params, cfg.adam);
  const std::size_t n = cfg.batch;
  result.batches_per_epoch = features.rows() / n;

  Mat batch(n, features.cols());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(features.rows(), shuffle_rng);
    for (std::size_t b = 0; b < result.batches_per_epoch; ++b, ++step) {
      for (std::size_t r = 0; r < n; ++r) {
        auto src = features.row(order[b * n + r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      Rng view1_rng = augment_root.split(2 * step);
      Rng view2_rng = augment_root.split(2 * step + 1);
      const Mat view1 = augment(batch, cfg.augment, view1_rng);
      const Mat view2 = augment(batch, cfg.augment, view2_rng);
      StepResult sr;
      try {
        sr = forward_backward(result.params, view1, view2, vcfg);
      } catch (const NumericError& err) {
        throw NumericError("train: step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + "): " + err.what());
      }
      adam_step(result.params, sr.grads, adam);
      result.history.push_back({step, sr.loss, sr.l_sorted, sr.l_r});
    }
  }
  if (!result.params.all_finite())
    throw NumericError("train: parameters became non-finite");
  return result;
}

void write_loss_history(std::ostream& out,
                        const std::vector<LossRecord>& history) {
  out << "step,loss,l_sorted,l_r\n" << std::setprecision(17);
  for (const auto& r : history)
    out << r.step << ',' << r.loss << ',' << r.l_sorted << ',' << r.l_r << '\n';
}

Dataset synth_clusters(const SynthConfig& cfg) {
  if (cfg.k < 2) throw ParameterError("synth_clusters: k must be >= 2");
  if (!(cfg.center_stddev > 0.0) || !(cfg.cluster_stddev > 0.0))
    throw ParameterError("synth_clusters: stddevs must be positive");
  if (cfg.d_x == 0 || cfg.per_cluster == 0)
    throw ParameterError("synth_clusters: empty dataset requested");
  if (cfg.query_per_cluster > cfg.per_cluster)
    throw ParameterError("synth_clusters: query_per_cluster > per_cluster");
  const Rng root(cfg.seed);
  Rng center_rng = root.split(1);
  Rng sample_rng = root.split(2);
  const Mat centers =
      gaussian_batch(center_rng, cfg.k, cfg.d_x, 0.0, cfg.center_stddev);

  Dataset ds;
  const std::size_t total = cfg.k * cfg.per_cluster;
  ds.features = Mat(total, cfg.d_x);
  ds.labels = LabelMatrix(total, cfg.k);
  ds.splits.resize(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cfg.k; ++c) {
    for (std::size_t i = 0; i < cfg.per_cluster; ++i, ++row) {
      auto dst = ds.features.row(row);
      auto center = centers.row(c);
      for (std::size_t d = 0; d < cfg.d_x; ++d)
        dst[d] = center[d] + cfg.cluster_stddev * sample_rng.normal();
      ds.labels->row(row)[c] = 1;
      ds.splits[row] =
          i < cfg.query_per_cluster ? Split::kQuery : Split::kDatabase;
    }
  }
  return ds;
}

namespace {

std::string Slurp(std::istream& in) {
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Rows of comma-separated fields; blank lines are skipped.
template <typename OnField>
std::size_t ParseCsv(const std::string& text, const std::string& what,
                     OnField on_field) {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    if (!Trim(line).empty()) {
      std::size_t fields = 0;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        const std::size_t stop =
            comma == std::string_view::npos ? line.size() : comma;
        on_field(Trim(line.substr(start, stop - start)), pos + start);
        ++fields;
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (rows == 0) width = fields;
      else if (fields != width)
        throw FormatError(what + ": row " + std::to_string(rows) + " has " +
                              std::to_string(fields) + " fields, expected " +
                              std::to_string(width),
                          pos);
      ++rows;
    }
    pos = eol + 1;
  }
  return rows == 0 ? 0 : width;
}

bool HasMagic(std::istream& in, std::string_view magic) {
  char buf[4] = {};
  in.read(buf, 4);
  const bool match = in.gcount() == 4 && std::string_view(buf, 4) == magic;
  in.clear();
  in.seekg(0);
  return match;
}

}  // namespace

Mat read_features(std::istream& in, const std::string& what) {
  if (HasMagic(in, "NSHF")) {
    binio::Reader r(in, what);
    r.ExpectMagic("NSHF");
    const auto version = r.LE<std::uint32_t>();
    if (version != 1)
      throw FormatError(what + ": unsupported version " +
                            std::to_string(version),
                        r.offset() - 4);
    const auto n = r.LE<std::uint64_t>();
    const auto d = r.LE<std::uint64_t>();
    r.ExpectRemaining(n * d * 4);
    Mat m(n, d);
    for (double& v : m.values()) {
      v = r.F32();
      if (!std::isfinite(v))
        throw FormatError(what + ": non-finite feature value", r.offset() - 4);
    }
    return m;
  }
  const std::string text = Slurp(in);
  std::vector<double> values;
  const std::size_t width =
      ParseCsv(text, what, [&](const std::string& field, std::uint64_t at) {
        values.push_back(ParseDouble(field, what, at));
      });
  const std::size_t rows = width == 0 ? 0 : values.size() / width;
  return Mat::FromData(rows, width, std::move(values));
}

Mat load_features(const std::string& path) {
  auto in = binio::OpenIn(path);
  return read_features(in, path);
}

void write_features(std::ostream& out, const Mat& features) {
  binio::PutMagic(out, "NSHF");
  binio::PutLE<std::uint32_t>(out, 1);
  binio::PutLE<std::uint64_t>(out, features.rows());
  binio::PutLE<std::uint64_t>(out, features.cols());
  for (double v : features.values())
    binio::PutF32(out, static_cast<float>(v));
}

void save_features(const std::string& path, const Mat& features) {
  auto out = binio::OpenOut(path);
  write_features(out, features);
}

LabelMatrix read_labels(std::istream& in, const std::string& what) {
  if (HasMagic(in, "NSHL")) {
    binio::Reader r(in, what);
    r.ExpectMagic("NSHL");
    const auto n = r.LE<std::uint64_t>();
    const auto width = r.LE<std::uint32_t>();
    r.ExpectRemaining(n * width);
    LabelMatrix labels(n, width);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& bit : labels.row(i)) {
        const auto v = r.LE<std::uint8_t>();
        if (v > 1)
          throw FormatError(what + ": label byte " + std::to_string(v) +
                                " is not 0 or 1",
                            r.offset() - 1);
        bit = v;
      }
    }
    return labels;
  }
  const std::string text = Slurp(in);
  std::vector<std::uint8_t> bits;
  const std::size_t width =
      ParseCsv(text, what, [&](const std::string& field, std::uint64_t at) {
        if (field != "0" && field != "1")
          throw FormatError(what + ": label \"" + field + "\" is not 0 or 1",
                            at);
        bits.push_back(field == "1");
      });
  const std::size_t rows = width == 0 ? 0 : bits.size() / width;
  LabelMatrix labels(rows, width);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(bits.begin() + i * width, width, labels.row(i).begin());
  return labels;
}

LabelMatrix load_labels(const std::string& path) {
  auto in = binio::OpenIn(path);
  return read_labels(in, path);
}

void write_labels(std::ostream& out, const LabelMatrix& labels) {
  binio::PutMagic(out, "NSHL");
  binio::PutLE<std::uint64_t>(out, labels.size());
  binio::PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(labels.width()));
  out.write(reinterpret_cast<const char*>(labels.bits().data()),
            static_cast<std::streamsize>(labels.bits().size()));
}

void save_labels(const std::string& path, const LabelMatrix& labels) {
  auto out = binio::OpenOut(path);
  write_labels(out, labels);
}

}  // namespace nsh
