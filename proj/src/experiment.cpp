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

#include "alseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "alseg/binary_io.hpp"
#include "alseg/contrastive.hpp"
#include "json.hpp"

namespace alseg {

using nlohmann::json;

IouResult miou(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth, std::size_t n_classes) {
  if (predictions.size() != ground_truth.size()) throw ArgumentError("miou: prediction and ground-truth counts differ");
  std::vector<std::uint64_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Mask& p = predictions[i];
    const Mask& g = ground_truth[i];
    if (p.size() != g.size()) throw ArgumentError("miou: mask " + std::to_string(i) + " shape mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] >= n_classes || g[k] >= n_classes) throw ArgumentError("miou: class id out of range");
      if (p[k] == g[k]) {
        ++tp[p[k]];
      } else {
        ++fp[p[k]];
        ++fn[g[k]];
      }
    }
  }
  IouResult r;
  r.per_class.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::uint64_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    r.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
    sum += r.per_class[c];
    ++counted;
  }
  r.miou = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

std::string to_string(InitMode m) { return m == InitMode::kNone ? "none" : "contrastive"; }

InitMode init_mode_from_string(const std::string& s) {
  if (s == "none") return InitMode::kNone;
  if (s == "contrastive") return InitMode::kContrastive;
  throw ArgumentError("unknown init mode '" + s + "' (expected none|contrastive)");
}

void ExperimentConfig::validate() const {
  if (budgets.empty()) throw ArgumentError("budgets must not be empty");
  if (budgets[0] < 1) throw ArgumentError("the first budget must be >= 1");
  for (std::size_t t = 1; t < budgets.size(); ++t) {
    if (budgets[t] <= budgets[t - 1]) throw ArgumentError("budgets must be strictly increasing");
  }
  if (n_seeds < 1) throw ArgumentError("n_seeds must be >= 1");
  if (grid != "none" && grid != "terms" && grid != "aggregators") {
    throw ArgumentError("grid must be none|terms|aggregators, got '" + grid + "'");
  }
  if (grid == "none" && strategies.empty()) throw ArgumentError("strategies must not be empty");
  for (const std::string& s : strategies) strategy_from_string(s);
  acquisition.validate();
}

std::vector<StrategyVariant> ExperimentConfig::variants() const {
  std::vector<StrategyVariant> out;
  const auto ra = [&](std::string label, bool r, bool u, bool d, Aggregator a) {
    out.push_back({std::move(label), AcquisitionConfig{Strategy::kRarenessAware, r, u, d, a}});
  };
  if (grid == "terms") {
    const Aggregator a = acquisition.aggregator;
    ra("ra[entropy]", false, true, false, a);
    ra("ra[entropy+rareness]", true, true, false, a);
    ra("ra[entropy+feature]", false, true, true, a);
    ra("ra[entropy+feature+rareness]", true, true, true, a);
  } else if (grid == "aggregators") {
    const AcquisitionConfig& q = acquisition;
    ra("ra[max]", q.use_rareness, q.use_entropy, q.use_diversity, Aggregator::kMax);
    ra("ra[mean]", q.use_rareness, q.use_entropy, q.use_diversity, Aggregator::kMean);
  } else {
    for (const std::string& s : strategies) {
      AcquisitionConfig q = acquisition;
      q.strategy = strategy_from_string(s);
      out.push_back({s, q});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

NetParams initial_params(const RunContext& ctx, std::uint64_t seed) {
  if (ctx.init_mode == InitMode::kNone) return init_params(ctx.net, seed);
  if (!ctx.pretrained) throw ConfigError("init_mode=contrastive requires a pretrained checkpoint");
  return transfer(*ctx.pretrained, ctx.net, seed);
}

std::vector<std::size_t> first_batch(const Dataset& dataset, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> pool = dataset.train_indices;
  if (size > pool.size()) {
    throw ConfigError("first budget " + std::to_string(size) + " exceeds the training pool of " +
                      std::to_string(pool.size()));
  }
  Rng rng = Rng::for_purpose(seed, purpose::kFirstBatch);
  for (std::size_t k = 0; k < size; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
  pool.resize(size);
  return pool;
}

namespace {

std::vector<std::size_t> set_difference(const std::vector<std::size_t>& all, std::vector<std::size_t> minus) {
  std::sort(minus.begin(), minus.end());
  std::vector<std::size_t> out;
  for (std::size_t i : all) {
    if (!std::binary_search(minus.begin(), minus.end(), i)) out.push_back(i);
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::vector<CycleResult> run_single(const RunContext& ctx, const StrategyVariant& strategy, std::uint64_t seed,
                                    int threads, std::vector<NetParams>* cycle_params) {
  if (!ctx.dataset) throw ArgumentError("run_single: no dataset");
  const Dataset& ds = *ctx.dataset;
  if (ctx.budgets.empty()) throw ConfigError("run_single: empty budget schedule");
  if (ctx.budgets.back() > ds.train_indices.size()) {
    throw ConfigError("final budget " + std::to_string(ctx.budgets.back()) + " exceeds the training pool of " +
                      std::to_string(ds.train_indices.size()));
  }
  const NetParams init = initial_params(ctx, seed);

  std::vector<Mask> test_masks;
  for (std::size_t i : ds.test_indices) test_masks.push_back(ds.masks[i]);

  const std::vector<std::size_t> batch0 = first_batch(ds, ctx.budgets[0], seed);
  PoolState pool = PoolState::create(ds.size(), batch0, set_difference(ds.train_indices, batch0));

  std::vector<CycleResult> results;
  NetParams previous;
  for (std::size_t t = 0; t < ctx.budgets.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    CycleResult cr;
    cr.cycle = t;
    if (t == 0) {
      cr.selection.picks = batch0;
    } else {
      Rng rng = Rng::for_purpose(seed, purpose::kRandomSelect + t);
      cr.selection = select_batch(previous, ds, pool, strategy.acquisition, ctx.budgets[t] - ctx.budgets[t - 1], rng,
                                  threads);
    }
    cr.selected = cr.selection.picks;
    cr.labels = pool.labelled.size();

    TrainConfig tc = ctx.train;
    tc.seed = seed ^ static_cast<std::uint64_t>(t);
    TrainResult tr = train(init, ds, pool.labelled, tc, threads);
    cr.loss_history = std::move(tr.loss_history);

    std::vector<Mask> preds(ds.test_indices.size());
    parallel_for(preds.size(), threads,
                 [&](std::size_t k) { preds[k] = predict_labels(tr.params, ds.images[ds.test_indices[k]]); });
    const IouResult iou = miou(preds, test_masks, ds.n_classes());
    cr.per_class_iou = iou.per_class;
    cr.miou = iou.miou;
    cr.wall_seconds = seconds_since(start);
    results.push_back(std::move(cr));
    previous = std::move(tr.params);
    if (cycle_params) cycle_params->push_back(previous);
  }
  return results;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("mean_std of an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs, std::size_t n_classes) {
  // Groups keep the order in which (strategy, init_mode) first appears.
  std::vector<std::pair<std::string, std::string>> keys;
  for (const RunRecord& r : runs) {
    const auto key = std::make_pair(r.strategy, r.init_mode);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<SummaryRow> out;
  for (const auto& [strategy, init_mode] : keys) {
    std::size_t n_cycles = 0;
    for (const RunRecord& r : runs) {
      if (r.strategy == strategy && r.init_mode == init_mode) n_cycles = std::max(n_cycles, r.cycles.size());
    }
    for (std::size_t t = 0; t < n_cycles; ++t) {
      SummaryRow row;
      row.strategy = strategy;
      row.init_mode = init_mode;
      row.cycle = t;
      std::vector<double> m;
      std::vector<std::vector<double>> per_class(n_classes);
      for (const RunRecord& r : runs) {
        if (r.strategy != strategy || r.init_mode != init_mode || t >= r.cycles.size()) continue;
        const CycleResult& c = r.cycles[t];
        row.labels = c.labels;
        m.push_back(c.miou);
        for (std::size_t k = 0; k < n_classes && k < c.per_class_iou.size(); ++k) {
          if (!std::isnan(c.per_class_iou[k])) per_class[k].push_back(c.per_class_iou[k]);
        }
      }
      std::tie(row.mean_miou, row.std_miou) = mean_std(m);
      row.n_seeds = m.size();
      for (const auto& v : per_class) {
        row.mean_iou.push_back(v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_std(v).first);
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

ExperimentOutput run_experiment(const RunContext& ctx, const ExperimentConfig& config, std::uint64_t base_seed,
                                const std::filesystem::path& out_dir, int threads) {
  config.validate();
  if (!ctx.dataset) throw ArgumentError("run_experiment: no dataset");
  const Dataset& ds = *ctx.dataset;
  RunContext run_ctx = ctx;
  run_ctx.budgets = config.budgets;
  run_ctx.init_mode = config.init_mode;
  if (config.init_mode == InitMode::kContrastive && !ctx.pretrained) {
    throw ConfigError("init_mode=contrastive requires a pretrained checkpoint (--init)");
  }
  if (config.budgets.back() > ds.train_indices.size()) {
    throw ConfigError("final budget " + std::to_string(config.budgets.back()) + " exceeds the training pool of " +
                      std::to_string(ds.train_indices.size()));
  }

  const std::vector<StrategyVariant> variants = config.variants();
  struct Job {
    const StrategyVariant* variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const StrategyVariant& v : variants) {
    for (std::uint32_t k = 0; k < config.n_seeds; ++k) jobs.push_back({&v, base_seed + k});
  }
  std::vector<RunRecord> runs(jobs.size());
  std::vector<NetParams> final_params(jobs.size());
  const int inner = std::max(1, threads / static_cast<int>(std::max<std::size_t>(1, jobs.size())));
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    std::vector<NetParams> params;
    RunRecord& rec = runs[j];
    rec.strategy = jobs[j].variant->label;
    rec.init_mode = to_string(config.init_mode);
    rec.seed = jobs[j].seed;
    rec.cycles = run_single(run_ctx, *jobs[j].variant, jobs[j].seed, inner,
                            config.overlay_images ? &params : nullptr);
    if (!params.empty()) final_params[j] = std::move(params.back());
  });

  ExperimentOutput out;
  out.runs = std::move(runs);
  out.summary = summarize(out.runs, ds.n_classes());

  std::filesystem::create_directories(out_dir);
  write_curve_csv(out_dir / "curve.csv", out.runs, ds.class_names, config.record_wall_time);
  write_summary_json(out_dir / "summary.json", out.summary, ds.class_names);
  std::ostringstream timing;
  timing << "strategy,init_mode,seed,cycle,wall_seconds\n";
  for (const RunRecord& r : out.runs) {
    for (const CycleResult& c : r.cycles) {
      timing << r.strategy << ',' << r.init_mode << ',' << r.seed << ',' << c.cycle << ','
             << format_real(c.wall_seconds) << '\n';
    }
  }
  write_text_file(out_dir / "timing.csv", timing.str());
  for (const RunRecord& r : out.runs) {
    for (const CycleResult& c : r.cycles) {
      write_selection_log(out_dir / "selection" / r.strategy / ("seed" + std::to_string(r.seed)) /
                              ("selection_cycle" + std::to_string(c.cycle) + ".json"),
                          c.cycle, c.cycle == 0 ? "random" : r.strategy, c.selection);
    }
  }
  if (config.overlay_images) {
    std::vector<std::size_t> shown(ds.test_indices.begin(),
                                   ds.test_indices.begin() + std::min<std::size_t>(config.overlay_images,
                                                                                   ds.test_indices.size()));
    for (std::size_t j = 0; j < out.runs.size(); ++j) {
      export_overlays(final_params[j], ds, shown,
                      out_dir / "overlays" / out.runs[j].strategy / ("seed" + std::to_string(out.runs[j].seed)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  // Nine significant digits identify a float uniquely.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs,
                     const std::vector<std::string>& class_names, bool record_wall_time) {
  std::ostringstream os;
  os << "strategy,init_mode,seed,cycle,labels,miou";
  for (const std::string& c : class_names) os << ",iou_" << c;
  os << ",wall_seconds\n";
  for (const RunRecord& r : runs) {
    for (const CycleResult& c : r.cycles) {
      os << r.strategy << ',' << r.init_mode << ',' << r.seed << ',' << c.cycle << ',' << c.labels << ','
         << format_real(c.miou);
      for (std::size_t k = 0; k < class_names.size(); ++k) {
        os << ',' << format_real(k < c.per_class_iou.size() ? c.per_class_iou[k] : std::nan(""));
      }
      os << ',' << format_real(record_wall_time ? c.wall_seconds : 0.0) << '\n';
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, os.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError("curve.csv line " + std::to_string(line) + ": bad number '" + s + "'", 0);
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') {
    throw FormatError("curve.csv line " + std::to_string(line) + ": bad integer '" + s + "'", 0);
  }
  return v;
}

}  // namespace

CurveTable read_curve_csv(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty curve file", 0);
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 7 || header[0] != "strategy" || header[5] != "miou" || header.back() != "wall_seconds") {
    throw FormatError(path.string() + ": unexpected curve.csv header", 0);
  }
  CurveTable table;
  for (std::size_t k = 6; k + 1 < header.size(); ++k) {
    if (header[k].rfind("iou_", 0) != 0) throw FormatError(path.string() + ": bad column '" + header[k] + "'", 0);
    table.class_names.push_back(header[k].substr(4));
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(header.size()),
                        0);
    }
    CurveRow row;
    row.strategy = cells[0];
    row.init_mode = cells[1];
    row.seed = parse_uint(cells[2], line_no);
    row.cycle = parse_uint(cells[3], line_no);
    row.labels = parse_uint(cells[4], line_no);
    row.miou = parse_real(cells[5], line_no);
    for (std::size_t k = 6; k + 1 < cells.size(); ++k) row.iou.push_back(parse_real(cells[k], line_no));
    row.wall_seconds = parse_real(cells.back(), line_no);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<RunRecord> runs_from_curve(const CurveTable& table) {
  std::vector<RunRecord> runs;
  for (const CurveRow& row : table.rows) {
    auto it = std::find_if(runs.begin(), runs.end(), [&](const RunRecord& r) {
      return r.strategy == row.strategy && r.init_mode == row.init_mode && r.seed == row.seed;
    });
    if (it == runs.end()) {
      runs.push_back({row.strategy, row.init_mode, row.seed, {}});
      it = runs.end() - 1;
    }
    CycleResult c;
    c.cycle = row.cycle;
    c.labels = row.labels;
    c.miou = row.miou;
    c.per_class_iou = row.iou;
    c.wall_seconds = row.wall_seconds;
    it->cycles.push_back(std::move(c));
  }
  return runs;
}

void write_summary_json(const std::filesystem::path& path, const std::vector<SummaryRow>& summary,
                        const std::vector<std::string>& class_names) {
  json rows = json::array();
  for (const SummaryRow& s : summary) {
    json per_class = json::object();
    for (std::size_t k = 0; k < class_names.size() && k < s.mean_iou.size(); ++k) {
      per_class[class_names[k]] = std::isnan(s.mean_iou[k]) ? json(nullptr) : json(s.mean_iou[k]);
    }
    rows.push_back({{"strategy", s.strategy},
                    {"init_mode", s.init_mode},
                    {"cycle", s.cycle},
                    {"labels", s.labels},
                    {"mean_miou", s.mean_miou},
                    {"std_miou", s.std_miou},
                    {"n_seeds", s.n_seeds},
                    {"mean_iou", per_class}});
  }
  json doc{{"class_names", class_names}, {"rows", rows}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Overlays
// ---------------------------------------------------------------------------

const std::vector<Rgb>& class_palette() {
  static const std::vector<Rgb> kPalette{
      {0, 0, 0},       {0, 114, 178},  {230, 159, 0},  {213, 94, 0},
      {0, 158, 115},   {204, 121, 167}, {240, 228, 66}, {86, 180, 233},
  };
  return kPalette;
}

std::vector<std::filesystem::path> export_overlays(const NetParams& model, const Dataset& dataset,
                                                   const std::vector<std::size_t>& indices,
                                                   const std::filesystem::path& out_dir) {
  const auto& palette = class_palette();
  if (dataset.n_classes() > palette.size()) throw ArgumentError("more classes than palette entries");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create overlay directory " + out_dir.string() + ": " + ec.message());
  const std::size_t h = dataset.height, w = dataset.width;
  std::vector<std::filesystem::path> written;
  for (std::size_t idx : indices) {
    const Tensor& img = dataset.images.at(idx);
    const Mask pred = predict_labels(model, img);
    const Mask& gt = dataset.masks.at(idx);
    std::string header = "P6\n" + std::to_string(3 * w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::clamp(static_cast<double>(img.values()[y * w + x]), 0.0, 1.0);
        const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
        bytes.insert(bytes.end(), {g, g, g});
      }
      for (const Mask* m : {&gt, &pred}) {
        for (std::size_t x = 0; x < w; ++x) {
          const Rgb c = palette[(*m)[y * w + x]];
          bytes.insert(bytes.end(), {c.r, c.g, c.b});
        }
      }
    }
    const auto path = out_dir / ("overlay_" + std::to_string(idx) + ".ppm");
    write_binary_file(path, bytes);
    written.push_back(path);
  }
  return written;
}

DecodedOverlay decode_overlay(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_binary_file(path);
  std::size_t pos = 0;
  const auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw FormatError("truncated PPM header", start);
    return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
  };
  if (token() != "P6") throw FormatError("not a binary PPM", 0);
  const std::size_t total_w = std::stoul(token());
  const std::size_t h = std::stoul(token());
  if (token() != "255") throw FormatError("PPM max value must be 255", pos);
  ++pos;  // single whitespace byte before the raster
  if (total_w % 3 != 0) throw FormatError("overlay width is not a multiple of 3", pos);
  const std::size_t w = total_w / 3;
  if (bytes.size() - pos != 3 * total_w * h) throw FormatError("PPM raster size mismatch", pos);

  DecodedOverlay d;
  d.height = h;
  d.width = w;
  d.gray.resize(h * w);
  d.ground_truth.resize(h * w);
  d.prediction.resize(h * w);
  const auto& palette = class_palette();
  const auto lookup = [&](std::size_t at) {
    const Rgb c{bytes[at], bytes[at + 1], bytes[at + 2]};
    for (std::size_t k = 0; k < palette.size(); ++k) {
      if (palette[k] == c) return static_cast<std::uint8_t>(k);
    }
    throw FormatError("pixel colour is not in the class palette", at);
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t row = pos + 3 * total_w * y;
      d.gray[y * w + x] = bytes[row + 3 * x];
      d.ground_truth[y * w + x] = lookup(row + 3 * (w + x));
      d.prediction[y * w + x] = lookup(row + 3 * (2 * w + x));
    }
  }
  return d;
}

}  // namespace alseg
