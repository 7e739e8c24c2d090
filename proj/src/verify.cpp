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

#include "alseg/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>

#include "alseg/binary_io.hpp"
#include "alseg/config.hpp"
#include "alseg/experiment.hpp"

namespace alseg {

double fd_step(Precision p) { return p == Precision::kFloat64 ? 1e-5 : 1e-3; }
double fd_tolerance(Precision p) { return p == Precision::kFloat64 ? 1e-4 : 1e-2; }
double relative_error_floor(Precision p) { return p == Precision::kFloat64 ? 1e-6 : 1e-2; }

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

NetConfig random_small_config(Rng& rng, std::uint32_t n_classes) {
  NetConfig c;
  c.in_channels = 1;
  c.enc1_channels = 2 + static_cast<std::uint32_t>(rng.below(2));
  c.enc2_channels = 2 + static_cast<std::uint32_t>(rng.below(3));
  c.dec_channels = 2 + static_cast<std::uint32_t>(rng.below(2));
  c.n_classes = n_classes;
  c.skip_connection = rng.bernoulli(0.5);
  return c;
}

// He init plus random biases so every bias gradient is exercised.
NetParams random_params(const NetConfig& c, Rng& rng) {
  NetParams p = init_params(c, rng.next_u64());
  for (Tensor* b : {&p.enc1_b, &p.enc2_b, &p.dec_b, &p.head_b}) {
    for (float& v : b->values()) v = static_cast<float>(0.2 * rng.normal());
  }
  return p;
}

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w, 1});
  for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

// Visits every scalar of every group of a parameter set.
template <typename Params>
void for_each_component(Params& params, const std::vector<std::string>& names,
                        const std::function<void(const std::string&, std::size_t, std::size_t)>& fn) {
  auto groups = params.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t k = 0; k < groups[g]->size(); ++k) fn(names[g], g, k);
  }
}

void merge_group(std::vector<GroupError>& groups, const std::string& name, double err) {
  auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupError& g) { return g.group == name; });
  if (it == groups.end()) {
    groups.push_back({name, 0.0, 0});
    it = groups.end() - 1;
  }
  it->max_rel_error = std::max(it->max_rel_error, err);
  ++it->components;
}


void finish(GradCheckReport& r, Precision p) {
  r.max_rel_error = 0.0;
  for (const GroupError& g : r.groups) r.max_rel_error = std::max(r.max_rel_error, g.max_rel_error);
  r.passed = r.instances > 0 && r.max_rel_error < fd_tolerance(p) &&
             static_cast<double>(r.skipped) <= kMaxSkippedFraction * static_cast<double>(r.components);
}

// ReLU is not differentiable at 0 and max-pooling switches winners, so a
// stencil whose endpoints see different activation patterns measures a kink
// rather than the gradient. Such components are skipped and counted.
template <typename Real>
void append_pattern(const ForwardPass<Real>& fp, std::vector<std::uint8_t>& out) {
  for (const auto* t : {&fp.a1, &fp.a2, &fp.decoder_features}) {
    for (Real v : t->values()) out.push_back(v > 0 ? 1 : 0);
  }
  for (std::uint32_t a : fp.pool_arg) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(a >> (8 * b)));
  }
}

struct Evaluation {
  double loss = 0.0;
  std::vector<std::uint8_t> pattern;
};

// Central difference of `eval` in component k of group g of `params`; empty
// when the stencil straddles a kink.
template <typename Params, typename Eval>
std::optional<double> central_difference(Params& params, std::size_t g, std::size_t k, double h, const Eval& eval) {
  auto* t = params.groups()[g];
  using Real = typename std::remove_reference_t<decltype(*t)>::value_type;
  const Real saved = (*t)[k];
  (*t)[k] = static_cast<Real>(saved + h);
  const Evaluation up = eval();
  (*t)[k] = static_cast<Real>(saved - h);
  const Evaluation down = eval();
  (*t)[k] = saved;
  if (up.pattern != down.pattern) return std::nullopt;
  return (up.loss - down.loss) / (2.0 * h);
}

void record(GradCheckReport& report, const std::string& name, double analytic, const std::optional<double>& numeric,
            double floor) {
  ++report.components;
  if (!numeric) {
    ++report.skipped;
    return;
  }
  merge_group(report.groups, name, relative_error(analytic, *numeric, floor));
}

template <typename Real>
GradCheckReport ce_check_impl(std::size_t instances, std::uint64_t seed, Precision precision) {
  GradCheckReport report;
  Rng rng(seed);
  const double h = fd_step(precision), floor = relative_error_floor(precision);
  for (std::size_t n = 0; n < instances; ++n) {
    const std::uint32_t classes = 2 + static_cast<std::uint32_t>(rng.below(3));
    const NetConfig c = random_small_config(rng, classes);
    BasicNetParams<Real> params = random_params(c, rng).template cast<Real>();
    const BasicTensor<Real> image = random_image(4, 4, rng).template cast<Real>();
    Mask mask(16);
    for (auto& m : mask) m = static_cast<std::uint8_t>(rng.below(classes));
    std::vector<double> weights(classes);
    for (double& w : weights) w = rng.uniform(0.5, 2.0);

    const auto eval = [&] {
      const ForwardPass<Real> fp = forward(params, image);
      Evaluation e{weighted_cross_entropy(fp.probs, mask, weights), {}};
      append_pattern(fp, e.pattern);
      return e;
    };
    const BasicNetParams<Real> grads = backward(forward(params, image), mask, weights);
    const auto grad_groups = grads.groups();
    for_each_component(params, BasicNetParams<Real>::group_names(),
                       [&](const std::string& name, std::size_t g, std::size_t k) {
                         record(report, name, static_cast<double>((*grad_groups[g])[k]),
                                central_difference(params, g, k, h, eval), floor);
                       });
    ++report.instances;
  }
  finish(report, precision);
  return report;
}

template <typename Real>
GradCheckReport nce_check_impl(std::size_t instances, std::uint64_t seed, Precision precision) {
  GradCheckReport report;
  Rng rng(seed);
  const double h = fd_step(precision), floor = relative_error_floor(precision);
  const double tau = 0.5;
  for (std::size_t n = 0; n < instances; ++n) {
    const NetConfig c = random_small_config(rng, 2);
    BasicNetParams<Real> net = random_params(c, rng).template cast<Real>();
    BasicProjectionHead<Real> head =
        init_projection_head(c.dec_channels, 3, 3, rng.next_u64()).template cast<Real>();
    for (auto* b : {&head.b1, &head.b2}) {
      for (Real& v : b->values()) v = static_cast<Real>(0.2 * rng.normal());
    }
    std::vector<BasicTensor<Real>> views;
    for (int v = 0; v < 4; ++v) views.push_back(random_image(4, 4, rng).template cast<Real>());

    const auto eval = [&] {
      Evaluation e;
      std::vector<std::vector<Real>> emb;
      for (const auto& view : views) {
        const ForwardPass<Real> fp = forward(net, view);
        append_pattern(fp, e.pattern);
        const Projection<Real> pr = project_features(head, fp.decoder_features);
        for (Real v : pr.hidden_pre) e.pattern.push_back(v > 0 ? 1 : 0);
        emb.push_back(pr.v);
      }
      e.loss = info_nce(emb, tau).loss;
      return e;
    };
    const ContrastiveGradients<Real> grads = info_nce_backward(views, net, head, tau);
    const auto net_grads = grads.net.groups();
    const auto& names = BasicNetParams<Real>::group_names();
    // The segmentation head plays no part in the contrastive loss.
    for (std::size_t g = 0; g + 2 < net_grads.size(); ++g) {
      for (std::size_t k = 0; k < net_grads[g]->size(); ++k) {
        record(report, names[g], static_cast<double>((*net_grads[g])[k]), central_difference(net, g, k, h, eval),
               floor);
      }
    }
    const std::vector<std::string> head_names{"proj_w1", "proj_b1", "proj_w2", "proj_b2"};
    const auto head_grads = grads.head.groups();
    for_each_component(head, head_names, [&](const std::string& name, std::size_t g, std::size_t k) {
      record(report, name, static_cast<double>((*head_grads[g])[k]), central_difference(head, g, k, h, eval), floor);
    });
    ++report.instances;
  }
  finish(report, precision);
  return report;
}

}  // namespace

GradCheckReport check_ce_gradients(std::size_t instances, std::uint64_t seed, Precision precision) {
  return precision == Precision::kFloat64 ? ce_check_impl<double>(instances, seed, precision)
                                          : ce_check_impl<float>(instances, seed, precision);
}

GradCheckReport check_info_nce_gradients(std::size_t instances, std::uint64_t seed, Precision precision) {
  return precision == Precision::kFloat64 ? nce_check_impl<double>(instances, seed, precision)
                                          : nce_check_impl<float>(instances, seed, precision);
}

// ---------------------------------------------------------------------------
// Selection oracles
// ---------------------------------------------------------------------------

SelectionInstance random_selection_instance(Rng& rng, std::size_t max_pool, std::size_t max_budget) {
  SelectionInstance inst;
  const std::uint32_t classes = 3 + static_cast<std::uint32_t>(rng.below(2));
  const std::size_t budget = 1 + rng.below(max_budget);
  const std::size_t pool = budget + rng.below(max_pool - budget + 1);
  const std::size_t n_labelled = 1 + rng.below(3);
  const std::size_t n = pool + n_labelled;

  Dataset& ds = inst.dataset;
  ds.height = ds.width = 4;
  for (std::uint32_t c = 0; c < classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.push_back(random_image(4, 4, rng));
    Mask m(16);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.below(classes));
    ds.masks.push_back(std::move(m));
    ds.train_indices.push_back(i);
  }
  // Random split of the images into L and U.
  std::vector<std::size_t> order = ds.train_indices;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) std::swap(order[k], order[k + rng.below(order.size() - k)]);
  inst.labelled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_labelled));
  inst.unlabelled.assign(order.begin() + static_cast<std::ptrdiff_t>(n_labelled), order.end());
  std::sort(inst.labelled.begin(), inst.labelled.end());
  std::sort(inst.unlabelled.begin(), inst.unlabelled.end());

  NetConfig c = random_small_config(rng, classes);
  inst.model = random_params(c, rng);
  // Scale the head up so predictions are confident enough to disagree.
  for (float& v : inst.model.head_w.values()) v *= 3.0f;

  AcquisitionConfig& q = inst.config;
  q.strategy = Strategy::kRarenessAware;
  do {
    q.use_rareness = rng.bernoulli(0.5);
    q.use_entropy = rng.bernoulli(0.5);
    q.use_diversity = rng.bernoulli(0.5);
  } while (!q.use_rareness && !q.use_entropy && !q.use_diversity);
  q.aggregator = rng.bernoulli(0.5) ? Aggregator::kMax : Aggregator::kMean;
  inst.budget = budget;
  return inst;
}

std::vector<std::size_t> brute_force_greedy(const SelectionInstance& inst) {
  const Dataset& ds = inst.dataset;
  const AcquisitionConfig& q = inst.config;
  const std::size_t nc = inst.model.config.n_classes;
  const std::size_t f = inst.model.config.dec_channels;
  const std::size_t pixels = ds.height * ds.width;

  // Fresh network outputs for every image.
  std::vector<std::vector<double>> probs(ds.size());
  std::vector<std::vector<float>> emb(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ForwardPass<float> fp = forward(inst.model, ds.images[i]);
    probs[i].assign(fp.probs.values().begin(), fp.probs.values().end());
    emb[i].assign(f, 0.0f);
    std::vector<double> sum(f, 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t k = 0; k < f; ++k) sum[k] += fp.decoder_features[p * f + k];
    }
    for (std::size_t k = 0; k < f; ++k) emb[i][k] = static_cast<float>(sum[k] / static_cast<double>(pixels));
  }
  const auto pseudo = [&](std::size_t i, std::size_t p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < nc; ++c) {
      if (probs[i][p * nc + c] > probs[i][p * nc + best]) best = c;
    }
    return best;
  };
  std::vector<double> posterior(nc, 0.0);
  for (std::size_t i : ds.train_indices) {
    for (std::size_t p = 0; p < pixels; ++p) posterior[pseudo(i, p)] += 1.0;
  }
  for (double& v : posterior) v /= static_cast<double>(ds.train_indices.size() * pixels);

  const auto aggregate = [&](const std::vector<double>& v) {
    if (q.aggregator == Aggregator::kMax) return *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const auto distance = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
      s += d * d;
    }
    return std::sqrt(s);
  };

  std::vector<std::size_t> refs = inst.labelled;
  std::vector<std::size_t> remaining = inst.unlabelled;
  std::vector<std::size_t> picks;
  for (std::size_t step = 0; step < inst.budget; ++step) {
    double best_score = -INFINITY;
    std::size_t best = remaining.size();
    for (std::size_t a = 0; a < remaining.size(); ++a) {
      const std::size_t i = remaining[a];
      double total = 0.0;
      if (q.use_rareness) {
        std::vector<double> r(pixels);
        for (std::size_t p = 0; p < pixels; ++p) r[p] = std::exp(-posterior[pseudo(i, p)]);
        total += aggregate(r);
      }
      if (q.use_entropy) {
        std::vector<double> u(pixels, 0.0);
        for (std::size_t p = 0; p < pixels; ++p) {
          for (std::size_t c = 0; c < nc; ++c) {
            const double pc = probs[i][p * nc + c];
            if (pc > 0.0) u[p] -= pc * std::log(pc);
          }
        }
        total += aggregate(u);
      }
      if (q.use_diversity) {
        double d = INFINITY;
        for (std::size_t j : refs) d = std::min(d, distance(emb[i], emb[j]));
        total += d;
      }
      if (best == remaining.size() || total > best_score) {
        best_score = total;
        best = a;
      }
    }
    picks.push_back(remaining[best]);
    refs.push_back(remaining[best]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return picks;
}

OracleReport check_greedy_oracle(std::size_t instances, std::uint64_t seed) {
  OracleReport report;
  Rng rng(seed);
  for (std::size_t n = 0; n < instances; ++n) {
    const SelectionInstance inst = random_selection_instance(rng);
    PoolState pool = PoolState::create(inst.dataset.size(), inst.labelled, inst.unlabelled);
    const Selection sel = greedy_select(inst.model, inst.dataset, pool, inst.config, inst.budget);
    if (sel.picks != brute_force_greedy(inst)) ++report.mismatches;

    // Replay the picks and compare the incremental cache with a recompute.
    std::vector<std::vector<float>> emb;
    for (const Tensor& img : inst.dataset.images) emb.push_back(image_embedding(inst.model, img));
    PoolState replay = PoolState::create(inst.dataset.size(), inst.labelled, inst.unlabelled);
    replay.set_embeddings(emb);
    std::vector<std::size_t> refs = inst.labelled;
    for (std::size_t pick : sel.picks) {
      replay.pick(pick);
      refs.push_back(pick);
      for (std::size_t i : replay.unlabelled) {
        double d = INFINITY;
        for (std::size_t j : refs) d = std::min(d, l2_distance(emb[i], emb[j]));
        if (d != replay.min_dist[i]) ++report.cache_mismatches;
      }
    }
    ++report.instances;
  }
  report.passed = report.instances > 0 && report.mismatches == 0 && report.cache_mismatches == 0;
  return report;
}

namespace {

bool same_selection(const Selection& a, const Selection& b) {
  if (a.picks != b.picks || a.breakdowns.size() != b.breakdowns.size()) return false;
  for (std::size_t k = 0; k < a.breakdowns.size(); ++k) {
    if (a.breakdowns[k].total != b.breakdowns[k].total) return false;
  }
  return true;
}

}  // namespace

ReductionReport check_reductions(std::size_t pools, std::uint64_t seed) {
  ReductionReport report;
  Rng rng(seed);
  for (std::size_t n = 0; n < pools; ++n) {
    SelectionInstance inst = random_selection_instance(rng, 16, 6);
    inst.config.aggregator = rng.bernoulli(0.5) ? Aggregator::kMax : Aggregator::kMean;

    AcquisitionConfig entropy_only{Strategy::kRarenessAware, false, true, false, inst.config.aggregator};
    const CandidateTerms terms = compute_candidate_terms(inst.model, inst.dataset,
                                                         PoolState::create(inst.dataset.size(), inst.labelled,
                                                                           inst.unlabelled),
                                                         AcquisitionConfig{Strategy::kRarenessAware, false, true, true,
                                                                           inst.config.aggregator});
    {
      PoolState a = PoolState::create(inst.dataset.size(), inst.labelled, inst.unlabelled);
      PoolState b = a;
      const Selection g = greedy_select(terms, a, entropy_only, inst.budget);
      const Selection e = entropy_select(terms, b, inst.budget);
      if (!same_selection(g, e) || a.labelled != b.labelled) ++report.entropy_mismatches;
    }
    {
      AcquisitionConfig diversity_only{Strategy::kRarenessAware, false, false, true, inst.config.aggregator};
      PoolState a = PoolState::create(inst.dataset.size(), inst.labelled, inst.unlabelled);
      PoolState b = a;
      const Selection g = greedy_select(terms, a, diversity_only, inst.budget);
      const Selection k = coreset_select(terms.embeddings, b, inst.budget);
      if (!same_selection(g, k) || a.labelled != b.labelled) ++report.coreset_mismatches;
    }
    ++report.pools;
  }
  report.passed = report.pools > 0 && report.entropy_mismatches == 0 && report.coreset_mismatches == 0;
  return report;
}

// ---------------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------------

namespace {

CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    std::tie(r.passed, r.detail) = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string describe(const GradCheckReport& r) {
  std::ostringstream os;
  os << r.instances << " instances, " << r.skipped << "/" << r.components
     << " components skipped at kinks, max relative error " << r.max_rel_error;
  for (const GroupError& g : r.groups) os << "; " << g.group << "=" << g.max_rel_error;
  return os.str();
}

template <typename Fn>
bool throws_format_error(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError&) {
    return true;
  } catch (const ValidationError&) {
    return true;
  }
  return false;
}

}  // namespace

std::vector<CheckResult> check_formats(const std::filesystem::path& scratch_dir) {
  std::vector<CheckResult> out;
  std::filesystem::create_directories(scratch_dir);

  out.push_back(timed("format.dataset_roundtrip", [&] {
    SceneSpec spec;
    spec.height = spec.width = 16;
    const Dataset ds = generate_dataset(spec, 12, 3);
    const auto dir = scratch_dir / "dataset";
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    bool ok = back == ds;
    // A truncated mask payload must be rejected.
    std::vector<std::uint8_t> masks = read_binary_file(dir / "masks.bin");
    masks.pop_back();
    write_binary_file(dir / "masks.bin", masks);
    ok = ok && throws_format_error([&] { load_dataset(dir); });
    return std::make_pair(ok, std::string(ok ? "save/load identity and truncation detected" : "mismatch"));
  }));

  out.push_back(timed("format.checkpoint_roundtrip", [&] {
    const NetParams p = init_params(NetConfig{}, 11);
    const auto path = scratch_dir / "params.bin";
    save_checkpoint(p, CheckpointKind::kFullSegmentation, path);
    const Checkpoint back = load_checkpoint(path);
    bool ok = back.params == p && back.kind == CheckpointKind::kFullSegmentation;
    save_checkpoint(p, CheckpointKind::kPretrainedEncoderDecoder, path);
    const Checkpoint pre = load_checkpoint(path);
    ok = ok && pre.kind == CheckpointKind::kPretrainedEncoderDecoder && pre.params.dec_w == p.dec_w &&
         pre.params.enc1_w == p.enc1_w;
    std::vector<std::uint8_t> bytes = encode_checkpoint(p, CheckpointKind::kFullSegmentation);
    bytes.resize(bytes.size() - 3);
    ok = ok && throws_format_error([&] { decode_checkpoint(bytes); });
    return std::make_pair(ok, std::string(ok ? "encode/decode identity and truncation detected" : "mismatch"));
  }));

  out.push_back(timed("format.config_roundtrip", [&] {
    RunConfig c;
    c.seed = 42;
    c.experiment.budgets = {5, 9};
    c.pretrain.augment.brightness = 0.1;
    c.finalize();
    const RunConfig back = parse_run_config(run_config_to_json(c).dump());
    bool ok = back == c;
    bool rejected = false;
    try {
      parse_run_config(R"({"train": {"epochz": 3}})");
    } catch (const ConfigError&) {
      rejected = true;
    }
    ok = ok && rejected;
    return std::make_pair(ok, std::string(ok ? "json identity and unknown key rejected" : "mismatch"));
  }));

  out.push_back(timed("format.curve_roundtrip", [&] {
    Rng rng(5);
    RunRecord run{"random", "none", 3, {}};
    for (std::size_t t = 0; t < 3; ++t) {
      CycleResult c;
      c.cycle = t;
      c.labels = 10 * (t + 1);
      c.miou = static_cast<float>(rng.uniform());
      c.per_class_iou = {rng.uniform(), std::nan(""), 1.0 / 3.0};
      run.cycles.push_back(c);
    }
    const auto path = scratch_dir / "curve.csv";
    write_curve_csv(path, {run}, {"a", "b", "c"}, false);
    const CurveTable table = read_curve_csv(path);
    bool ok = table.rows.size() == 3 && table.class_names == std::vector<std::string>{"a", "b", "c"};
    for (std::size_t t = 0; ok && t < 3; ++t) {
      const CurveRow& row = table.rows[t];
      const CycleResult& c = run.cycles[t];
      // 9 significant digits reproduce every float exactly.
      ok = row.labels == c.labels && static_cast<float>(row.miou) == static_cast<float>(c.miou) &&
           static_cast<float>(row.iou[0]) == static_cast<float>(c.per_class_iou[0]) && std::isnan(row.iou[1]);
    }
    return std::make_pair(ok, std::string(ok ? "csv reload matches" : "mismatch"));
  }));
  return out;
}

std::vector<CheckResult> selftest(const std::filesystem::path& scratch_dir) {
  std::vector<CheckResult> out;
  const auto grad = [&](const char* name, GradCheckReport (*fn)(std::size_t, std::uint64_t, Precision),
                        Precision p) {
    out.push_back(timed(name, [&] {
      const GradCheckReport r = fn(20, 1234, p);
      return std::make_pair(r.passed, describe(r));
    }));
  };
  grad("gradcheck.cross_entropy.float64", check_ce_gradients, Precision::kFloat64);
  grad("gradcheck.cross_entropy.float32", check_ce_gradients, Precision::kFloat32);
  grad("gradcheck.info_nce.float64", check_info_nce_gradients, Precision::kFloat64);
  grad("gradcheck.info_nce.float32", check_info_nce_gradients, Precision::kFloat32);
  out.push_back(timed("oracle.greedy_vs_brute_force", [] {
    const OracleReport r = check_greedy_oracle(50, 99);
    return std::make_pair(r.passed, std::to_string(r.instances) + " instances, " + std::to_string(r.mismatches) +
                                        " pick mismatches, " + std::to_string(r.cache_mismatches) +
                                        " cache mismatches");
  }));
  out.push_back(timed("oracle.reductions", [] {
    const ReductionReport r = check_reductions(20, 77);
    return std::make_pair(r.passed, std::to_string(r.pools) + " pools, entropy mismatches " +
                                        std::to_string(r.entropy_mismatches) + ", coreset mismatches " +
                                        std::to_string(r.coreset_mismatches));
  }));
  for (CheckResult& r : check_formats(scratch_dir)) out.push_back(std::move(r));
  return out;
}

}  // namespace alseg
