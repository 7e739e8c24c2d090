// Copyright 2026 The alseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Python bindings: datasets, the segmentation network, scores, selection,
// metrics and the command-line entry point. Images cross the boundary as
// float32 numpy arrays (H x W or H x W x C), masks as uint8 H x W arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "alseg/acquisition.hpp"
#include "alseg/commands.hpp"
#include "alseg/contrastive.hpp"
#include "alseg/datagen.hpp"
#include "alseg/experiment.hpp"
#include "alseg/model.hpp"
#include "alseg/verify.hpp"

namespace py = pybind11;
using namespace alseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  py::array_t<float> out(t.shape());
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ArgumentError("expected an H x W or H x W x C array");
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  if (shape.size() == 2) shape.push_back(1);
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> mask_to_numpy(const Mask& m, std::size_t h, std::size_t w) {
  py::array_t<std::uint8_t> out({h, w});
  std::copy(m.begin(), m.end(), out.mutable_data());
  return out;
}

Mask to_mask(const MaskArray& a) { return Mask(a.data(), a.data() + a.size()); }

std::vector<float> to_vector(const FloatArray& a) { return std::vector<float>(a.data(), a.data() + a.size()); }

py::dict grad_report(const GradCheckReport& r) {
  py::dict groups;
  for (const GroupError& g : r.groups) groups[py::str(g.group)] = g.max_rel_error;
  py::dict d;
  d["instances"] = r.instances;
  d["components"] = r.components;
  d["skipped"] = r.skipped;
  d["max_rel_error"] = r.max_rel_error;
  d["groups"] = groups;
  d["passed"] = r.passed;
  return d;
}

Precision precision_from_string(const std::string& s) {
  if (s == "float32") return Precision::kFloat32;
  if (s == "float64") return Precision::kFloat64;
  throw ArgumentError("precision must be float32 or float64, got " + s);
}

}  // namespace

PYBIND11_MODULE(_alseg, m) {
  m.doc() = "Active learning for segmentation with rareness-aware selection";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  // -------------------------------------------------------------------------
  // Data

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def_readonly("class_names", &Dataset::class_names)
      .def_readonly("train_indices", &Dataset::train_indices)
      .def_readonly("test_indices", &Dataset::test_indices)
      .def_readonly("seed", &Dataset::seed)
      .def_property_readonly("n_classes", &Dataset::n_classes)
      .def("__len__", &Dataset::size)
      .def("image", [](const Dataset& d, std::size_t i) { return to_numpy(d.images.at(i)); })
      .def("mask", [](const Dataset& d, std::size_t i) { return mask_to_numpy(d.masks.at(i), d.height, d.width); })
      .def("save", [](const Dataset& d, const std::filesystem::path& dir) { save_dataset(d, dir); })
      .def_static("load", &load_dataset);

  m.def(
      "generate_dataset",
      [](std::size_t n_images, std::uint64_t seed, std::size_t height, std::size_t width, const std::string& variant,
         double void_probability, double void_radius_min, double void_radius_max, double noise_sigma,
         double train_fraction) {
        SceneSpec spec;
        spec.height = height;
        spec.width = width;
        spec.variant = die_variant_from_string(variant);
        spec.void_probability = void_probability;
        spec.void_radius_min = void_radius_min;
        spec.void_radius_max = void_radius_max;
        spec.noise_sigma = noise_sigma;
        spec.train_fraction = train_fraction;
        return generate_dataset(spec, n_images, seed);
      },
      py::arg("n_images") = 375, py::arg("seed") = 0, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("variant") = "memory", py::arg("void_probability") = 0.3, py::arg("void_radius_min") = 1.0,
      py::arg("void_radius_max") = 3.0, py::arg("noise_sigma") = 0.05, py::arg("train_fraction") = 0.8);

  m.def(
      "class_frequencies",
      [](const Dataset& d, const std::vector<std::size_t>& indices) { return class_frequencies(d, indices).probs(); },
      py::arg("dataset"), py::arg("indices"));

  // -------------------------------------------------------------------------
  // Network

  py::class_<NetParams>(m, "NetParams")
      .def_property_readonly("parameter_count", &NetParams::parameter_count)
      .def_property_readonly("n_classes", [](const NetParams& p) { return p.config.n_classes; })
      .def_property_readonly("dec_channels", [](const NetParams& p) { return p.config.dec_channels; })
      .def("__eq__", [](const NetParams& a, const NetParams& b) { return a == b; })
      .def(
          "save",
          [](const NetParams& p, const std::filesystem::path& path, bool pretrained) {
            save_checkpoint(p, pretrained ? CheckpointKind::kPretrainedEncoderDecoder : CheckpointKind::kFullSegmentation,
                            path);
          },
          py::arg("path"), py::arg("pretrained") = false)
      .def_static(
          "load", [](const std::filesystem::path& path) { return load_checkpoint(path).params; }, py::arg("path"));

  m.def(
      "init_params",
      [](std::uint64_t seed, std::uint32_t n_classes, std::uint32_t enc1, std::uint32_t enc2, std::uint32_t dec,
         bool skip) {
        NetConfig c;
        c.n_classes = n_classes;
        c.enc1_channels = enc1;
        c.enc2_channels = enc2;
        c.dec_channels = dec;
        c.skip_connection = skip;
        c.validate();
        return init_params(c, seed);
      },
      py::arg("seed") = 0, py::arg("n_classes") = 5, py::arg("enc1_channels") = 8, py::arg("enc2_channels") = 16,
      py::arg("dec_channels") = 8, py::arg("skip_connection") = true);

  m.def(
      "predict", [](const NetParams& p, const FloatArray& image) { return to_numpy(predict(p, to_tensor(image))); },
      py::arg("params"), py::arg("image"), "H x W x C class posteriors");
  m.def(
      "predict_labels",
      [](const NetParams& p, const FloatArray& image) {
        const Tensor t = to_tensor(image);
        return mask_to_numpy(predict_labels(p, t), t.dim(0), t.dim(1));
      },
      py::arg("params"), py::arg("image"));
  m.def(
      "image_embedding",
      [](const NetParams& p, const FloatArray& image) { return image_embedding(p, to_tensor(image)); },
      py::arg("params"), py::arg("image"));

  m.def(
      "train",
      [](const NetParams& init, const Dataset& d, const std::vector<std::size_t>& labelled, std::uint32_t epochs,
         std::uint32_t batch_size, double learning_rate, std::uint64_t seed, int threads) {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.seed = seed;
        t.validate();
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(init, d, labelled, t, threads);
        }
        return py::make_tuple(r.params, r.loss_history);
      },
      py::arg("init"), py::arg("dataset"), py::arg("labelled"), py::arg("epochs") = 50, py::arg("batch_size") = 16,
      py::arg("learning_rate") = 1e-3, py::arg("seed") = 0, py::arg("threads") = 1,
      "Returns (params, per-epoch mean loss).");

  m.def(
      "pretrain",
      [](const Dataset& d, std::uint32_t epochs, std::uint32_t batch_size, double learning_rate, double temperature,
         std::uint64_t seed, int threads) {
        PretrainConfig pc;
        pc.epochs = epochs;
        pc.batch_size = batch_size;
        pc.learning_rate = learning_rate;
        pc.temperature = temperature;
        pc.seed = seed;
        NetConfig net;
        net.n_classes = static_cast<std::uint32_t>(d.n_classes());
        py::gil_scoped_release release;
        return pretrain(d, net, pc, threads).params;
      },
      py::arg("dataset"), py::arg("epochs") = 100, py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-3,
      py::arg("temperature") = 0.5, py::arg("seed") = 0, py::arg("threads") = 1);
  m.def(
      "transfer",
      [](const NetParams& pretrained, std::uint64_t seed) { return transfer(pretrained, pretrained.config, seed); },
      py::arg("pretrained"), py::arg("seed"));

  // -------------------------------------------------------------------------
  // Losses and scores

  m.def(
      "class_weights", [](const Dataset& d, const std::vector<std::size_t>& labelled) { return class_weights(d, labelled); },
      py::arg("dataset"), py::arg("labelled"));
  m.def(
      "weighted_cross_entropy",
      [](const FloatArray& probs, const MaskArray& mask, const std::vector<double>& weights) {
        return weighted_cross_entropy(to_tensor(probs), to_mask(mask), weights);
      },
      py::arg("probs"), py::arg("mask"), py::arg("weights"));
  m.def(
      "softmax", [](const FloatArray& logits) { return softmax(to_vector(logits)).probs(); }, py::arg("logits"));
  m.def(
      "entropy", [](const std::vector<double>& probs) { return entropy(ClassDistribution(probs)); }, py::arg("probs"));
  m.def(
      "info_nce_loss",
      [](const FloatArray& embeddings, double temperature) {
        if (embeddings.ndim() != 2) throw ArgumentError("embeddings must be a 2B x D array");
        std::vector<std::vector<float>> rows;
        const auto n = static_cast<std::size_t>(embeddings.shape(0));
        const auto dim = static_cast<std::size_t>(embeddings.shape(1));
        for (std::size_t i = 0; i < n; ++i) rows.emplace_back(embeddings.data() + i * dim, embeddings.data() + (i + 1) * dim);
        return info_nce_loss(rows, temperature);
      },
      py::arg("embeddings"), py::arg("temperature") = 0.5, "Rows 2k and 2k+1 are the two views of sample k.");
  m.def(
      "rareness",
      [](const FloatArray& probs, const std::vector<double>& posterior, const std::string& aggregator) {
        return rareness_from_probs(to_tensor(probs), ClassDistribution(posterior), aggregator_from_string(aggregator));
      },
      py::arg("probs"), py::arg("posterior"), py::arg("aggregator") = "max");
  m.def(
      "entropy_score",
      [](const FloatArray& probs, const std::string& aggregator) {
        return entropy_from_probs(to_tensor(probs), aggregator_from_string(aggregator));
      },
      py::arg("probs"), py::arg("aggregator") = "max");
  m.def(
      "class_posterior",
      [](const NetParams& p, const Dataset& d, int threads) {
        return class_posterior(p, d, d.train_indices, threads).probs();
      },
      py::arg("params"), py::arg("dataset"), py::arg("threads") = 1);

  // -------------------------------------------------------------------------
  // Selection and metrics

  m.def(
      "select",
      [](const NetParams& p, const Dataset& d, const std::vector<std::size_t>& labelled, std::size_t budget,
         const std::string& strategy, const std::string& aggregator, bool use_rareness, bool use_entropy,
         bool use_diversity, std::uint64_t seed, int threads) {
        AcquisitionConfig cfg;
        cfg.strategy = strategy_from_string(strategy);
        cfg.aggregator = aggregator_from_string(aggregator);
        cfg.use_rareness = use_rareness;
        cfg.use_entropy = use_entropy;
        cfg.use_diversity = use_diversity;
        cfg.validate();
        std::vector<std::size_t> sorted_l = labelled;
        std::sort(sorted_l.begin(), sorted_l.end());
        std::vector<std::size_t> pool;
        for (std::size_t i : d.train_indices) {
          if (!std::binary_search(sorted_l.begin(), sorted_l.end(), i)) pool.push_back(i);
        }
        std::sort(pool.begin(), pool.end());
        PoolState state = PoolState::create(d.size(), sorted_l, pool);
        Rng rng(seed);
        Selection s;
        {
          py::gil_scoped_release release;
          s = select_batch(p, d, state, cfg, budget, rng, threads);
        }
        py::list breakdowns;
        for (const ScoreBreakdown& b : s.breakdowns) {
          py::dict e;
          e["r"] = b.r;
          e["u"] = b.u;
          e["d"] = b.d;
          e["total"] = b.total;
          breakdowns.append(e);
        }
        py::dict out;
        out["picks"] = s.picks;
        out["breakdowns"] = breakdowns;
        out["posterior"] = s.posterior ? py::cast(s.posterior->probs()) : py::none();
        return out;
      },
      py::arg("params"), py::arg("dataset"), py::arg("labelled"), py::arg("budget"),
      py::arg("strategy") = "rareness_aware", py::arg("aggregator") = "max", py::arg("use_rareness") = true,
      py::arg("use_entropy") = true, py::arg("use_diversity") = true, py::arg("seed") = 0, py::arg("threads") = 1,
      "Picks `budget` training images outside `labelled`, in pick order.");

  m.def(
      "miou",
      [](const std::vector<MaskArray>& predictions, const std::vector<MaskArray>& ground_truth, std::size_t n_classes) {
        std::vector<Mask> p, g;
        for (const auto& a : predictions) p.push_back(to_mask(a));
        for (const auto& a : ground_truth) g.push_back(to_mask(a));
        const IouResult r = miou(p, g, n_classes);
        return py::make_tuple(r.miou, r.per_class);
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("n_classes"),
      "Returns (mIoU, per-class IoU); classes absent from both sides are NaN and not averaged.");

  // -------------------------------------------------------------------------
  // Oracles and the command line

  m.def(
      "check_ce_gradients",
      [](std::size_t instances, std::uint64_t seed, const std::string& precision) {
        const Precision p = precision_from_string(precision);
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = check_ce_gradients(instances, seed, p);
        }
        return grad_report(r);
      },
      py::arg("instances") = 20, py::arg("seed") = 0, py::arg("precision") = "float64");
  m.def(
      "check_info_nce_gradients",
      [](std::size_t instances, std::uint64_t seed, const std::string& precision) {
        const Precision p = precision_from_string(precision);
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = check_info_nce_gradients(instances, seed, p);
        }
        return grad_report(r);
      },
      py::arg("instances") = 20, py::arg("seed") = 0, py::arg("precision") = "float64");
  m.def(
      "check_greedy_oracle",
      [](std::size_t instances, std::uint64_t seed) {
        const OracleReport r = check_greedy_oracle(instances, seed);
        py::dict d;
        d["instances"] = r.instances;
        d["mismatches"] = r.mismatches;
        d["cache_mismatches"] = r.cache_mismatches;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("instances") = 50, py::arg("seed") = 0);
  m.def(
      "check_reductions",
      [](std::size_t pools, std::uint64_t seed) {
        const ReductionReport r = check_reductions(pools, seed);
        py::dict d;
        d["pools"] = r.pools;
        d["entropy_mismatches"] = r.entropy_mismatches;
        d["coreset_mismatches"] = r.coreset_mismatches;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("pools") = 20, py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one `alseg` subcommand; returns (exit code, stdout, stderr).");
}
