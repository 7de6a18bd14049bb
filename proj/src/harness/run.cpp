// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "anchorlab/analysis/auc.hpp"
#include "anchorlab/analysis/compression.hpp"
#include "anchorlab/analysis/diagnosis.hpp"
#include "anchorlab/analysis/flow.hpp"
#include "anchorlab/analysis/intervention.hpp"
#include "anchorlab/analysis/reweight.hpp"
#include "anchorlab/corpus/synthetic.hpp"
#include "anchorlab/harness/csv.hpp"
#include "anchorlab/harness/hash.hpp"
#include "anchorlab/harness/svg.hpp"
#include "anchorlab/model/checkpoint.hpp"
#include "anchorlab/model/train.hpp"
#include "anchorlab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anchorlab {

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {"saliency", "isolate", "auc", "reweight", "compress", "diagnose"};
  return kinds;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

std::optional<fs::path> opt_path(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return fs::path(j.at(key).get<std::string>());
}

void put_path(json& j, const char* key, const std::optional<fs::path>& p) {
  j[key] = p ? json(p->string()) : json(nullptr);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  static const std::vector<std::string> known = {"experiment", "checkpoint", "seeds",    "n_test",   "shots",
                                                 "dtype",      "output_dir", "template", "tokenizer", "demos",
                                                 "test",       "params"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw std::invalid_argument("config: unknown field '" + key + "'");
  }
  RunConfig c;
  if (j.contains("experiment")) c.experiment = j.at("experiment").get<std::string>();
  if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("n_test")) c.n_test = j.at("n_test").get<std::size_t>();
  if (j.contains("shots")) c.shots = j.at("shots").get<std::size_t>();
  if (j.contains("dtype")) c.dtype = j.at("dtype").get<std::string>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.template_path = opt_path(j, "template");
  c.tokenizer_dir = opt_path(j, "tokenizer");
  c.demos_path = opt_path(j, "demos");
  c.test_path = opt_path(j, "test");
  if (j.contains("params")) c.params = j.at("params");
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["checkpoint"] = checkpoint.string();
  j["seeds"] = seeds;
  j["n_test"] = n_test;
  j["shots"] = shots;
  j["dtype"] = dtype;
  j["output_dir"] = output_dir.string();
  put_path(j, "template", template_path);
  put_path(j, "tokenizer", tokenizer_dir);
  put_path(j, "demos", demos_path);
  put_path(j, "test", test_path);
  j["params"] = params;
  return j;
}

void RunConfig::validate() const {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), experiment) == kinds.end()) {
    throw std::invalid_argument("config: unknown experiment '" + experiment + "'");
  }
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (n_test == 0) throw std::invalid_argument("config: n_test must be positive");
  if (shots == 0) throw std::invalid_argument("config: shots must be positive");
  if (dtype != "f32" && dtype != "f64") throw std::invalid_argument("config: dtype must be f32 or f64");
  if (!fs::is_regular_file(checkpoint / "manifest.json")) {
    throw std::invalid_argument("config: no checkpoint at '" + checkpoint.string() + "'");
  }
  if (!params.is_object()) throw std::invalid_argument("config: params must be an object");
  const int external = !!template_path + !!tokenizer_dir + !!demos_path + !!test_path;
  if (external != 0 && external != 4) {
    throw std::invalid_argument("config: template, tokenizer, demos and test must be given together");
  }
  for (const auto* p : {&template_path, &demos_path, &test_path}) {
    if (*p && !fs::is_regular_file(**p)) throw std::invalid_argument("config: missing file '" + (*p)->string() + "'");
  }
  if (tokenizer_dir && !fs::is_regular_file(*tokenizer_dir / "vocab.json")) {
    throw std::invalid_argument("config: no vocab.json in '" + tokenizer_dir->string() + "'");
  }
}

json RunManifest::to_json() const {
  json j;
  j["artifact"] = "anchorlab";
  j["version"] = kArtifactVersion;
  j["experiment"] = experiment;
  j["config"] = config;
  j["started"] = started;
  j["finished"] = finished;
  j["files"] = json::array();
  for (const auto& f : files) {
    j["files"].push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}, {"aggregate", f.aggregate}});
  }
  return j;
}

RunManifest RunManifest::load(const fs::path& dir) {
  const auto j = json::parse(read_file(dir / "manifest.json"));
  RunManifest m;
  m.dir = dir;
  m.experiment = j.at("experiment").get<std::string>();
  m.config = j.at("config");
  m.started = j.at("started").get<std::string>();
  m.finished = j.at("finished").get<std::string>();
  for (const auto& f : j.at("files")) {
    m.files.push_back({f.at("name").get<std::string>(), f.at("sha256").get<std::string>(),
                       f.at("bytes").get<std::uintmax_t>(), f.at("aggregate").get<bool>()});
  }
  return m;
}

RunDirectory RunDirectory::create(const fs::path& root, const std::string& experiment) {
  fs::create_directories(root);
  std::string stamp = utc_timestamp();
  std::erase(stamp, ':');
  std::erase(stamp, '-');
  const std::string base = experiment + "-" + stamp;
  RunDirectory d;
  d.experiment_ = experiment;
  d.started_ = utc_timestamp();
  for (int i = 0;; ++i) {
    d.dir_ = root / (i == 0 ? base : base + "-" + std::to_string(i + 1));
    if (fs::create_directory(d.dir_)) break;
  }
  return d;
}

void RunDirectory::write(const std::string& name, const std::string& content, bool aggregate) {
  write_file(dir_ / name, content);
  files_.push_back({name, sha256_hex(content), content.size(), aggregate});
}

RunManifest RunDirectory::finish(const json& config) {
  RunManifest m{dir_, experiment_, config, started_, utc_timestamp(), files_};
  const auto tmp = dir_ / "manifest.json.tmp";
  write_file(tmp, m.to_json().dump(2) + "\n");
  fs::rename(tmp, dir_ / "manifest.json");
  return m;
}

void RunDirectory::fail(const std::string& message) {
  write_file(dir_ / "FAILED", message + "\n");
}

namespace {

template <typename T>
struct Workload {
  ModelWeights<T> weights;
  Template tpl;
  Tokenizer tokenizer;
  std::vector<LabeledExample> demo_pool;
  std::vector<LabeledExample> test;
  std::string source;
};

template <typename T>
Workload<T> load_workload(const RunConfig& c) {
  const auto ckpt = load_checkpoint<T>(c.checkpoint);
  Workload<T> wl{ModelWeights<T>::from_checkpoint(ckpt), {}, {}, {}, {}, {}};
  if (c.template_path) {
    wl.tpl = Template::load(*c.template_path);
    const auto merges = *c.tokenizer_dir / "merges.txt";
    wl.tokenizer = Tokenizer::load(*c.tokenizer_dir / "vocab.json",
                                   fs::exists(merges) ? std::optional<fs::path>(merges) : std::nullopt);
    wl.demo_pool = load_labeled_file(*c.demos_path);
    wl.test = load_labeled_file(*c.test_path);
    wl.source = c.test_path->filename().string();
  } else {
    const auto task = gen_synthetic_task(task_spec_from_meta(ckpt.meta));
    wl.tpl = task.tpl;
    wl.tokenizer = task.tokenizer;
    wl.demo_pool = task.train;
    wl.test = task.test;
    wl.source = to_string(task.spec.kind);
  }
  if (wl.tokenizer.size() > wl.weights.config.vocab_size) {
    throw std::invalid_argument("tokenizer has " + std::to_string(wl.tokenizer.size()) + " tokens, model vocabulary " +
                                std::to_string(wl.weights.config.vocab_size));
  }
  if (wl.test.empty()) throw std::invalid_argument("test split is empty");
  return wl;
}

template <typename T>
std::vector<IclPrompt> seed_prompts(const Workload<T>& wl, const RunConfig& c, std::uint64_t seed, std::size_t shots) {
  const std::size_t n = std::min(c.n_test, wl.test.size());
  return build_prompt_set(wl.tpl, wl.tokenizer, wl.demo_pool, wl.test, n, shots, seed,
                          wl.weights.config.max_seq_len);
}

std::vector<double> layer_axis(std::size_t n) {
  std::vector<double> x(n);
  std::iota(x.begin(), x.end(), 1.0);
  return x;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

template <typename T>
json run_saliency(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  const std::size_t N = wl.weights.config.n_layers;
  std::vector<FlowTriple> raw(N);
  std::size_t prompts = 0;
  for (auto seed : c.seeds) {
    const auto ps = seed_prompts(wl, c, seed, c.shots);
    auto rep = flow_curve(wl.weights, ps);
    rep.meta["seed"] = std::to_string(seed);
    out.write("flow_seed" + std::to_string(seed) + ".csv", flow_csv(rep));
    for (std::size_t l = 0; l < N; ++l) {
      raw[l].s_wp += rep.raw[l].s_wp / static_cast<double>(c.seeds.size());
      raw[l].s_pq += rep.raw[l].s_pq / static_cast<double>(c.seeds.size());
      raw[l].s_ww += rep.raw[l].s_ww / static_cast<double>(c.seeds.size());
    }
    prompts += ps.size();
  }
  FlowReport agg{N, raw, {}, {{"dataset", wl.source}, {"n_prompts", std::to_string(prompts)}}};
  for (const auto& t : raw) agg.normalized.push_back(t.normalized());
  out.write("flow.csv", flow_csv(agg));
  std::vector<double> wp, pq, ww;
  for (const auto& t : agg.normalized) wp.push_back(t.s_wp), pq.push_back(t.s_pq), ww.push_back(t.s_ww);
  const auto x = layer_axis(N);
  out.write("flow.svg", svg_line_chart("Information flow by layer", "layer", "normalized share",
                                       {{"S_wp", x, wp}, {"S_pq", x, pq}, {"S_ww", x, ww}}));
  const std::size_t quarter = std::max<std::size_t>(1, N / 4);
  return {{"n_layers", N},
          {"n_prompts", prompts},
          {"s_wp_first_quartile", mean_of(wp, 0, quarter)},
          {"s_wp_last_quartile", mean_of(wp, N - quarter, N)},
          {"s_pq_first_quartile", mean_of(pq, 0, quarter)},
          {"s_pq_last_quartile", mean_of(pq, N - quarter, N)}};
}

template <typename T>
json run_isolate(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  const std::size_t N = wl.weights.config.n_layers;
  const auto k = c.param<std::size_t>("k", std::min<std::size_t>(5, N));
  std::vector<std::size_t> ks;
  if (c.param<bool>("sweep", true)) {
    for (std::size_t i = 0; i <= N; ++i) ks.push_back(i);
  }
  if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  std::sort(ks.begin(), ks.end());
  std::map<std::pair<std::string, std::size_t>, std::pair<double, double>> acc;
  for (auto seed : c.seeds) {
    const auto ps = seed_prompts(wl, c, seed, c.shots);
    for (const std::string side : {"first", "last"}) {
      const auto rows = layer_sweep(wl.weights, ps, ks, side);
      for (const auto& r : rows) {
        auto& a = acc[{side, r.k}];
        a.first += r.result.label_loyalty / static_cast<double>(c.seeds.size());
        a.second += r.result.word_loyalty / static_cast<double>(c.seeds.size());
        if (r.k == k) {
          out.write("audit_seed" + std::to_string(seed) + "_" + side + ".jsonl", loyalty_audit_jsonl(r, wl.tokenizer));
        }
      }
    }
  }
  std::vector<SweepRow> sweep, main;
  for (const auto& [key, v] : acc) {
    SweepRow row{key.first, key.second, {}};
    row.result.label_loyalty = v.first;
    row.result.word_loyalty = v.second;
    sweep.push_back(row);
    if (key.second == k) main.push_back(row);
  }
  out.write("isolation.csv", loyalty_csv(main));
  out.write("isolation_sweep.csv", loyalty_csv(sweep));
  std::vector<Series> series;
  for (const std::string side : {"first", "last"}) {
    Series label{side + " label", {}, {}}, word{side + " word", {}, {}};
    for (const auto& r : sweep) {
      if (r.side != side) continue;
      label.x.push_back(static_cast<double>(r.k));
      label.y.push_back(r.result.label_loyalty);
      word.x.push_back(static_cast<double>(r.k));
      word.y.push_back(r.result.word_loyalty);
    }
    series.push_back(label);
    series.push_back(word);
  }
  out.write("isolation_sweep.svg", svg_line_chart("Loyalty vs isolated layers", "isolated layers", "loyalty (%)", series));
  return {{"k", k},
          {"first_label_loyalty", acc.at({"first", k}).first},
          {"first_word_loyalty", acc.at({"first", k}).second},
          {"last_label_loyalty", acc.at({"last", k}).first},
          {"last_word_loyalty", acc.at({"last", k}).second}};
}

template <typename T>
json run_auc(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  const std::size_t N = wl.weights.config.n_layers;
  std::vector<double> auc(N, 0.0);
  for (auto seed : c.seeds) {
    const auto curve = layer_auc(wl.weights, seed_prompts(wl, c, seed, c.shots));
    out.write("auc_seed" + std::to_string(seed) + ".csv", auc_csv(curve));
    for (std::size_t l = 0; l < N; ++l) auc[l] += curve.auc[l] / static_cast<double>(c.seeds.size());
  }
  AucCurve agg{auc, accumulate_r(auc)};
  out.write("auc.csv", auc_csv(agg));
  const auto x = layer_axis(N);
  out.write("auc.svg", svg_line_chart("Anchor attention vs prediction", "layer", "value",
                                      {{"AUCROC_l", x, agg.auc}, {"R_l", x, agg.r}}));
  const std::size_t quarter = std::max<std::size_t>(1, N / 4);
  return {{"n_layers", N},
          {"auc_first_quartile", mean_of(agg.auc, 0, quarter)},
          {"auc_last_quartile", mean_of(agg.auc, N - quarter, N)},
          {"r_at_quarter", agg.r[quarter - 1]}};
}

struct ReweightData {
  std::vector<IclPrompt> train;
  std::vector<IclPrompt> test;
};

template <typename T>
ReweightData reweight_data(const Workload<T>& wl, const RunConfig& c, std::uint64_t seed) {
  const auto train_per_class = c.param<std::size_t>("train_per_class", 4);
  const std::size_t C = wl.tpl.n_classes();
  const std::size_t n = std::min(c.n_test, wl.test.size());
  const std::vector<LabeledExample> queries(wl.test.begin(), wl.test.begin() + static_cast<std::ptrdiff_t>(n));
  const CounterRng rng(seed, "reweight");
  const auto demos = sample_demos(wl.demo_pool, C, c.shots, rng.fork("demos").next_u64());
  std::vector<LabeledExample> rest;
  for (const auto& e : wl.demo_pool) {
    const bool used = std::any_of(demos.begin(), demos.end(),
                                  [&](const LabeledExample& d) { return d.text == e.text && d.label == e.label; });
    if (!used) rest.push_back(e);
  }
  const auto train = sample_demos(rest, C, train_per_class, rng.fork("train").next_u64());
  const std::uint64_t order = rng.fork("order").next_u64();
  const std::size_t max_len = wl.weights.config.max_seq_len;
  return {fixed_demo_prompts(wl.tpl, wl.tokenizer, demos, train, order, max_len),
          fixed_demo_prompts(wl.tpl, wl.tokenizer, demos, queries, order, max_len)};
}

ReweightConfig reweight_config(const RunConfig& c, std::uint64_t seed) {
  ReweightConfig rc;
  rc.epochs = c.param<std::size_t>("epochs", rc.epochs);
  rc.adam.lr = c.param<double>("lr", rc.adam.lr);
  rc.seed = seed;
  return rc;
}

template <typename T>
json run_reweight(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  CsvWriter table({"seed", "vanilla_accuracy", "reweighted_accuracy", "first_epoch_loss", "last_epoch_loss"});
  CsvWriter losses({"seed", "epoch", "mean_loss"});
  double vanilla_sum = 0.0, rew_sum = 0.0;
  for (auto seed : c.seeds) {
    const auto data = reweight_data(wl, c, seed);
    const auto fit = train_beta(wl.weights, data.train, reweight_config(c, seed));
    const auto zero = BetaVector::zeros(fit.beta.n_layers, fit.beta.n_heads, fit.beta.n_classes);
    const auto vanilla = eval_reweighted(wl.weights, zero, data.test);
    const auto rew = eval_reweighted(wl.weights, fit.beta, data.test);
    out.write("beta_seed" + std::to_string(seed) + ".json", fit.beta.to_json() + "\n");
    table.row({std::to_string(seed), csv_number(vanilla.accuracy), csv_number(rew.accuracy),
               csv_number(fit.epoch_loss.front()), csv_number(fit.epoch_loss.back())});
    for (std::size_t e = 0; e < fit.epoch_loss.size(); ++e) {
      losses.row({std::to_string(seed), std::to_string(e + 1), csv_number(fit.epoch_loss[e])});
    }
    vanilla_sum += vanilla.accuracy;
    rew_sum += rew.accuracy;
  }
  const double k = static_cast<double>(c.seeds.size());
  table.row({"mean", csv_number(vanilla_sum / k), csv_number(rew_sum / k), "", ""});
  out.write("reweight.csv", table.str());
  out.write("reweight_loss.csv", losses.str());
  return {{"vanilla_accuracy", vanilla_sum / k}, {"reweighted_accuracy", rew_sum / k}};
}

template <typename T>
json run_compress(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  const std::vector<CompressionMethod> methods = {CompressionMethod::kVanilla, CompressionMethod::kHiddenAnchor,
                                                  CompressionMethod::kTextAnchor, CompressionMethod::kHiddenRandom};
  BenchOptions opts;
  opts.repeats = c.param<std::size_t>("repeats", opts.repeats);
  const bool time = c.param<bool>("time", true);
  std::vector<MethodReport> sum(methods.size());
  for (auto& s : sum) s.label_loyalty = s.word_loyalty = 0.0;
  double ratio = 0.0;
  CsvWriter timing({"seed", "method", "median_latency_ms", "speedup", "ratio", "noisy"});
  for (auto seed : c.seeds) {
    opts.seed = seed;
    opts.time = time;
    const auto rep = benchmark(wl.weights, seed_prompts(wl, c, seed, c.shots), methods, opts);
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const auto& r = rep.methods[i];
      sum[i].method = r.method;
      sum[i].label_loyalty += r.label_loyalty;
      sum[i].word_loyalty += r.word_loyalty;
      sum[i].accuracy += r.accuracy;
      timing.row({std::to_string(seed), to_string(r.method), csv_number(r.median_latency_ms), csv_number(r.speedup),
                  csv_number(rep.length_ratio), r.noisy ? "true" : "false"});
    }
    ratio += rep.length_ratio;
  }
  const double k = static_cast<double>(c.seeds.size());
  for (auto& s : sum) {
    s.label_loyalty /= k;
    s.word_loyalty /= k;
    s.accuracy /= k;
  }
  BenchReport agg{sum, ratio / k, {}};
  out.write("compression.csv", bench_csv(agg));
  if (time) out.write("compression_timing.csv", timing.str(), false);

  json summary = {{"ratio", agg.length_ratio}};
  for (const auto& m : agg.methods) {
    summary[to_string(m.method)] = {{"label_loyalty", m.label_loyalty}, {"word_loyalty", m.word_loyalty}, {"accuracy", m.accuracy}};
  }
  if (time && c.params.contains("ratio_shots")) {
    CsvWriter sweep({"shots", "ratio", "vanilla_ms", "hidden_anchor_ms", "speedup"});
    json rows = json::array();
    for (auto shots : c.params.at("ratio_shots").get<std::vector<std::size_t>>()) {
      BenchOptions o = opts;
      o.seed = c.seeds.front();
      const auto rep = benchmark(wl.weights, seed_prompts(wl, c, c.seeds.front(), shots),
                                 {CompressionMethod::kVanilla, CompressionMethod::kHiddenAnchor}, o);
      sweep.row({std::to_string(shots), csv_number(rep.length_ratio), csv_number(rep.methods[0].median_latency_ms),
                 csv_number(rep.methods[1].median_latency_ms), csv_number(rep.methods[1].speedup)});
      rows.push_back({{"shots", shots}, {"ratio", rep.length_ratio}, {"speedup", rep.methods[1].speedup}});
    }
    out.write("speedup_by_ratio.csv", sweep.str(), false);
    summary["timing"] = {{"speedup_by_ratio", rows}};
  }
  return summary;
}

template <typename T>
json run_diagnose(const Workload<T>& wl, const RunConfig& c, RunDirectory& out) {
  std::vector<IclPrompt> prompts;
  for (auto seed : c.seeds) {
    auto ps = seed_prompts(wl, c, seed, c.shots);
    prompts.insert(prompts.end(), ps.begin(), ps.end());
  }
  std::size_t layer = 0;
  const auto layer_param = c.params.contains("layer") ? c.params.at("layer") : json("auto");
  if (layer_param.is_string()) {
    if (layer_param.get<std::string>() != "auto") throw std::invalid_argument("diagnose: layer must be an index or \"auto\"");
    layer = auto_layer(wl.weights, prompts);
  } else {
    layer = layer_param.get<std::size_t>();
  }
  const auto m = c.param<std::size_t>("m", 10);
  const auto features = khat(wl.weights, prompts, layer, m);
  const auto predicted = predicted_confusion(features.features);
  const auto actual = actual_confusion(wl.weights, prompts);
  const auto cmp = compare_confusions(predicted, actual.matrix);
  const auto& names = wl.tpl.label_words;
  out.write("confusion_predicted.csv", matrix_csv(predicted, names));
  out.write("confusion_actual.csv", matrix_csv(actual.matrix, names));
  out.write("confusion.svg", svg_heatmaps({"predicted", "actual"}, {predicted, actual.matrix}, names));

  const auto ms = c.param<std::vector<std::size_t>>("m_sweep", kDefaultMSweep);
  CsvWriter sweep({"m", "m_used", "spearman", "predicted_min_pair", "actual_min_pair"});
  auto pair_name = [&](std::pair<std::size_t, std::size_t> p) { return names[p.first] + "-" + names[p.second]; };
  auto rho = [](const std::optional<double>& v) { return v ? csv_number(*v) : std::string("n/a"); };
  json sweep_json = json::array();
  for (const auto& row : m_sweep(wl.weights, prompts, layer, actual.matrix, ms)) {
    sweep.row({std::to_string(row.m_requested), std::to_string(row.m_used), rho(row.comparison.spearman),
               pair_name(row.comparison.most_confused_predicted), pair_name(row.comparison.most_confused_actual)});
    sweep_json.push_back({{"m", row.m_requested}, {"predicted_min_pair", pair_name(row.comparison.most_confused_predicted)}});
  }
  out.write("m_sweep.csv", sweep.str());
  json undefined = json::array();
  for (const auto& [i, j] : actual.undefined) undefined.push_back(pair_name({i, j}));
  return {{"layer", layer},
          {"m", features.m},
          {"spearman", cmp.spearman ? json(*cmp.spearman) : json("n/a")},
          {"predicted_min_pair", pair_name(cmp.most_confused_predicted)},
          {"actual_min_pair", pair_name(cmp.most_confused_actual)},
          {"undefined_pairs", undefined},
          {"m_sweep", sweep_json}};
}

template <typename T>
json run_kind(const RunConfig& c, RunDirectory& out) {
  const auto wl = load_workload<T>(c);
  if (c.experiment == "saliency") return run_saliency(wl, c, out);
  if (c.experiment == "isolate") return run_isolate(wl, c, out);
  if (c.experiment == "auc") return run_auc(wl, c, out);
  if (c.experiment == "reweight") return run_reweight(wl, c, out);
  if (c.experiment == "compress") return run_compress(wl, c, out);
  return run_diagnose(wl, c, out);
}

template <typename T>
ReweightResult reweight_train_impl(const RunConfig& c) {
  const auto wl = load_workload<T>(c);
  return train_beta(wl.weights, reweight_data(wl, c, c.seeds.front()).train, reweight_config(c, c.seeds.front()));
}

template <typename T>
EvalResult reweight_eval_impl(const RunConfig& c, const BetaVector& beta) {
  const auto wl = load_workload<T>(c);
  return eval_reweighted(wl.weights, beta, reweight_data(wl, c, c.seeds.front()).test);
}

}  // namespace

ReweightResult reweight_train(const RunConfig& config) {
  config.validate();
  return config.dtype == "f64" ? reweight_train_impl<double>(config) : reweight_train_impl<float>(config);
}

EvalResult reweight_eval(const RunConfig& config, const BetaVector& beta) {
  config.validate();
  return config.dtype == "f64" ? reweight_eval_impl<double>(config, beta) : reweight_eval_impl<float>(config, beta);
}

RunManifest run_experiment(const RunConfig& config) {
  config.validate();
  auto out = RunDirectory::create(config.output_dir, config.experiment);
  try {
    json summary = config.dtype == "f64" ? run_kind<double>(config, out) : run_kind<float>(config, out);
    if (summary.contains("timing")) {
      out.write("timing.json", summary["timing"].dump(2) + "\n", false);
      summary.erase("timing");
    }
    json full = {{"experiment", config.experiment}, {"checkpoint_sha256", sha256_file(config.checkpoint / "tensors.bin")}, {"results", summary}};
    out.write("summary.json", full.dump(2) + "\n");
    return out.finish(config.to_json());
  } catch (const std::exception& e) {
    out.fail(e.what());
    throw;
  }
}

}  // namespace anchorlab
