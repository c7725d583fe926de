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

// Python bindings. Matrices cross the boundary as C-contiguous float64
// arrays, labels as uint8 and binary codes as float64 in {-1, +1}.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>

#include "nsh/errors.h"
#include "nsh/experiment.h"
#include "nsh/hashcore.h"
#include "nsh/metrics.h"
#include "nsh/model.h"
#include "nsh/pipeline.h"

namespace py = pybind11;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

nsh::Mat ToMat(const F64Array& a, const char* name) {
  if (a.ndim() != 2)
    throw nsh::ShapeError(std::string(name) + " must be a 2-D array");
  nsh::Mat m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data());
  return m;
}

F64Array FromMat(const nsh::Mat& m) {
  F64Array out({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.rows() * m.cols(), out.mutable_data());
  return out;
}

nsh::LabelMatrix ToLabels(const U8Array& a) {
  if (a.ndim() != 2) throw nsh::ShapeError("labels must be a 2-D array");
  nsh::LabelMatrix l(a.shape(0), a.shape(1));
  for (std::size_t i = 0; i < l.size(); ++i)
    for (std::size_t c = 0; c < l.width(); ++c)
      l.row(i)[c] = a.at(i, c) != 0;
  return l;
}

U8Array FromLabels(const nsh::LabelMatrix& l) {
  U8Array out({l.size(), l.width()});
  std::copy(l.bits().begin(), l.bits().end(), out.mutable_data());
  return out;
}

// Config dictionaries reuse the `key=value` file parser.
nsh::RunConfig ToRunConfig(const py::dict& options) {
  std::ostringstream text;
  for (const auto& [key, value] : options) {
    std::string rendered;
    if (py::isinstance<py::list>(value) || py::isinstance<py::tuple>(value)) {
      for (const auto& item : value) {
        if (!rendered.empty()) rendered += ",";
        rendered += py::str(item).cast<std::string>();
      }
    } else {
      rendered = py::str(value).cast<std::string>();
    }
    text << py::str(key).cast<std::string>() << "=" << rendered << "\n";
  }
  std::istringstream in(text.str());
  return nsh::parse_run_config(in);
}

py::dict ReportToDict(const nsh::MetricReport& r) {
  py::dict p_at_k;
  for (const auto& [cutoff, value] : r.p_at_k) p_at_k[py::int_(cutoff)] = value;
  py::list pr;
  for (const auto& point : r.pr_curve)
    pr.append(py::make_tuple(point.threshold, point.recall, point.precision));
  py::dict out;
  out["k"] = r.k;
  out["map"] = r.map_at_k;
  out["p_at_k"] = p_at_k;
  out["p_at_h2"] = r.p_at_hamming_r2;
  out["pr_curve"] = pr;
  return out;
}

py::list HistoryToList(const std::vector<nsh::LossRecord>& history) {
  py::list out;
  for (const auto& rec : history)
    out.append(py::make_tuple(rec.step, rec.loss, rec.l_sorted, rec.l_r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_nshash, m) {
  m.doc() = "Binary hashing with a soft-sorted contrastive objective.";

  py::register_exception<nsh::FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<nsh::ModelParams>(m, "Model")
      .def_property_readonly("input_dim", &nsh::ModelParams::input_dim)
      .def_property_readonly("code_bits", &nsh::ModelParams::code_bits)
      .def("hash_outputs",
           [](const nsh::ModelParams& p, const F64Array& x) {
             return FromMat(nsh::encode(p, ToMat(x, "x")).h);
           },
           py::arg("x"), "tanh outputs of the hash head.")
      .def("codes",
           [](const nsh::ModelParams& p, const F64Array& x) {
             return FromMat(nsh::unpack_codes(nsh::encode_codes(p, ToMat(x, "x"))));
           },
           py::arg("x"), "Binary codes in {-1, +1}.")
      .def("save", [](const nsh::ModelParams& p,
                      const std::string& path) { nsh::save_checkpoint(path, p); })
      .def_static("load", &nsh::load_checkpoint, py::arg("path"))
      .def("__eq__", [](const nsh::ModelParams& a, const nsh::ModelParams& b) {
        return a == b;
      });

  m.def(
      "synth_clusters",
      [](std::size_t k, std::size_t per_cluster, std::size_t d_x,
         double center_stddev, double cluster_stddev, std::uint64_t seed,
         std::size_t query_per_cluster) {
        nsh::SynthConfig cfg;
        cfg.k = k;
        cfg.per_cluster = per_cluster;
        cfg.d_x = d_x;
        cfg.center_stddev = center_stddev;
        cfg.cluster_stddev = cluster_stddev;
        cfg.seed = seed;
        cfg.query_per_cluster = query_per_cluster;
        const nsh::Dataset ds = nsh::synth_clusters(cfg);
        py::array_t<bool> is_query(static_cast<py::ssize_t>(ds.splits.size()));
        for (std::size_t i = 0; i < ds.splits.size(); ++i)
          is_query.mutable_at(i) = ds.splits[i] == nsh::Split::kQuery;
        py::dict out;
        out["features"] = FromMat(ds.features);
        out["labels"] = FromLabels(*ds.labels);
        out["is_query"] = is_query;
        return out;
      },
      py::arg("k") = 10, py::arg("per_cluster") = 100, py::arg("d_x") = 64,
      py::arg("center_stddev") = 1.0, py::arg("cluster_stddev") = 0.15,
      py::arg("seed") = 0, py::arg("query_per_cluster") = 0,
      "Gaussian clusters with one-hot labels.");

  m.def(
      "train",
      [](const F64Array& features, const py::dict& config) {
        nsh::Dataset ds;
        ds.features = ToMat(features, "features");
        ds.splits.assign(ds.features.rows(), nsh::Split::kTrain);
        const nsh::RunConfig cfg = ToRunConfig(config);
        nsh::TrainResult result;
        {
          py::gil_scoped_release release;
          result = nsh::train(ds, cfg);
        }
        return py::make_tuple(result.params, HistoryToList(result.history));
      },
      py::arg("features"), py::arg("config") = py::dict(),
      "Trains a model. Returns (model, [(step, loss, l_sorted, l_r), ...]).");

  m.def(
      "evaluate",
      [](const F64Array& db_codes, const F64Array& query_codes,
         const U8Array& db_labels, const U8Array& query_labels, std::size_t k) {
        nsh::RetrievalRun run{
            nsh::pack_codes(nsh::sign_ste(ToMat(db_codes, "db_codes"))),
            nsh::pack_codes(nsh::sign_ste(ToMat(query_codes, "query_codes"))),
            ToLabels(db_labels), ToLabels(query_labels)};
        return ReportToDict(nsh::evaluate(run, k));
      },
      py::arg("db_codes"), py::arg("query_codes"), py::arg("db_labels"),
      py::arg("query_labels"), py::arg("k") = 100,
      "Hamming-ranking retrieval metrics.");

  m.def(
      "run_experiment",
      [](const F64Array& db_features, const U8Array& db_labels,
         const F64Array& query_features, const U8Array& query_labels,
         const py::dict& config, std::size_t k) {
        const nsh::RetrievalData data{ToMat(db_features, "db_features"),
                                      ToLabels(db_labels),
                                      ToMat(query_features, "query_features"),
                                      ToLabels(query_labels)};
        const nsh::RunConfig cfg = ToRunConfig(config);
        nsh::ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = nsh::run_experiment(data, cfg, k);
        }
        return ReportToDict(r.report);
      },
      py::arg("db_features"), py::arg("db_labels"), py::arg("query_features"),
      py::arg("query_labels"), py::arg("config") = py::dict(), py::arg("k") = 100,
      "Trains on the database features and reports retrieval metrics.");

  m.def(
      "similarity",
      [](const F64Array& b1, const F64Array& b2) {
        return FromMat(nsh::similarity_matrix(ToMat(b1, "b1"), ToMat(b2, "b2")));
      },
      py::arg("b1"), py::arg("b2"), "B1 B2^T / (2 d_b) + 1/2.");

  m.attr("VARIANTS") = [] {
    py::list names;
    for (nsh::Variant v : nsh::AllVariants())
      names.append(std::string(nsh::VariantName(v)));
    return names;
  }();
}
