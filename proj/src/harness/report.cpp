// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <sstream>

#include "anchorlab/harness/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace anchorlab {

namespace {

constexpr const char* kDisclaimer =
    "> Desk-scale values from a small model on synthetic data. Reference numbers are published GPT2-XL results "
    "on real benchmarks and are not comparable; only the direction of each comparison is meaningful.\n";

std::string fmt(const json& v, const char* spec = "%.2f") {
  if (!v.is_number()) return v.is_string() ? v.get<std::string>() : v.dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v.get<double>());
  return buf;
}

std::string isolate_section(const json& r) {
  std::ostringstream os;
  const std::string k = std::to_string(r.at("k").get<std::size_t>());
  os << "| Isolation layer | Label loyalty | Word loyalty | Reference label / word loyalty |\n";
  os << "|---|---|---|---|\n";
  os << "| No isolation | 100.00 | 100.00 | 100.00 / 100.00 |\n";
  os << "| First " << k << " layers | " << fmt(r.at("first_label_loyalty")) << " | " << fmt(r.at("first_word_loyalty"))
     << " | 44.03 / 6.30 |\n";
  os << "| Last " << k << " layers | " << fmt(r.at("last_label_loyalty")) << " | " << fmt(r.at("last_word_loyalty"))
     << " | 99.61 / 99.52 |\n";
  return os.str();
}

std::string compress_section(const json& r) {
  std::ostringstream os;
  os << "| Method | Label loyalty | Word loyalty | Accuracy | Reference (label / word / acc.) |\n";
  os << "|---|---|---|---|---|\n";
  const std::pair<const char*, const char*> rows[] = {{"vanilla", "100.00 / 100.00 / 51.90"},
                                                      {"text_anchor", "51.05 / 36.65 / 38.77"},
                                                      {"hidden_random", "44.25 / 6.62 / 31.80"},
                                                      {"hidden_anchor", "79.47 / 62.17 / 45.04"}};
  for (const auto& [name, ref] : rows) {
    if (!r.contains(name)) continue;
    const auto& m = r.at(name);
    os << "| " << name << " | " << fmt(m.at("label_loyalty")) << " | " << fmt(m.at("word_loyalty")) << " | "
       << fmt(m.at("accuracy"), "%.4f") << " | " << ref << " |\n";
  }
  os << "\nMean (L_demo + L_x) / L_x: " << fmt(r.at("ratio")) << "\n";
  return os.str();
}

std::string timing_section(const fs::path& dir) {
  std::ifstream in(dir / "timing.json");
  if (!in) return "";
  const auto t = json::parse(in);
  std::ostringstream os;
  os << "\n| Shots per class | (L_demo + L_x) / L_x | Hidden-anchor speedup |\n|---|---|---|\n";
  for (const auto& row : t.at("speedup_by_ratio")) {
    os << "| " << row.at("shots").get<std::size_t>() << " | " << fmt(row.at("ratio")) << " | "
       << fmt(row.at("speedup")) << "x |\n";
  }
  os << "\nReference speedups (GPT2-XL): 1.1x to 2.5x at ratios 1.9 to 9.7.\n";
  return os.str();
}

std::string section(const RunManifest& m) {
  std::ostringstream os;
  os << "## " << m.experiment << " (" << m.dir.filename().string() << ")\n\n";
  os << "Started " << m.started << ", finished " << m.finished << ". Seeds: " << m.config.value("seeds", json::array()).dump()
     << ", element kind " << m.config.value("dtype", std::string("?")) << ".\n\n";
  std::vector<std::string> missing;
  for (const auto& f : m.files) {
    if (!fs::exists(m.dir / f.name)) missing.push_back(f.name);
  }
  std::ifstream in(m.dir / "summary.json");
  if (!in) missing.push_back("summary.json");
  if (!missing.empty()) {
    os << "Missing outputs:";
    for (const auto& f : missing) os << " " << f;
    os << "\n\n";
  }
  if (!in) return os.str();
  const auto r = json::parse(in).at("results");
  os << kDisclaimer << "\n";
  if (m.experiment == "isolate") {
    os << isolate_section(r);
  } else if (m.experiment == "compress") {
    os << compress_section(r) << timing_section(m.dir);
  } else if (m.experiment == "reweight") {
    os << "| Method | Accuracy | Reference average accuracy |\n|---|---|---|\n";
    os << "| Vanilla (fixed demonstrations) | " << fmt(r.at("vanilla_accuracy"), "%.4f") << " | 51.90 |\n";
    os << "| Anchor re-weighting | " << fmt(r.at("reweighted_accuracy"), "%.4f") << " | 68.64 |\n";
  } else if (m.experiment == "auc") {
    os << "| Statistic | Value |\n|---|---|\n";
    os << "| Mean AUCROC_l, first quartile of layers | " << fmt(r.at("auc_first_quartile"), "%.4f") << " |\n";
    os << "| Mean AUCROC_l, last quartile of layers | " << fmt(r.at("auc_last_quartile"), "%.4f") << " |\n";
    os << "| R_l at N/4 | " << fmt(r.at("r_at_quarter"), "%.4f") << " |\n";
    os << "\nReference: AUCROC_l reaches about 0.8 in deep layers of GPT2-XL.\n";
  } else if (m.experiment == "saliency") {
    os << "| Share | First quartile | Last quartile |\n|---|---|---|\n";
    os << "| S_wp | " << fmt(r.at("s_wp_first_quartile"), "%.4f") << " | " << fmt(r.at("s_wp_last_quartile"), "%.4f") << " |\n";
    os << "| S_pq | " << fmt(r.at("s_pq_first_quartile"), "%.4f") << " | " << fmt(r.at("s_pq_last_quartile"), "%.4f") << " |\n";
  } else if (m.experiment == "diagnose") {
    os << "| Statistic | Value |\n|---|---|\n";
    os << "| Layer | " << r.at("layer").dump() << " |\n";
    os << "| M | " << r.at("m").dump() << " |\n";
    os << "| Spearman (predicted vs actual) | " << fmt(r.at("spearman"), "%.4f") << " |\n";
    os << "| Most confused pair, predicted | " << r.at("predicted_min_pair").get<std::string>() << " |\n";
    os << "| Most confused pair, actual | " << r.at("actual_min_pair").get<std::string>() << " |\n";
  }
  return os.str();
}

}  // namespace

std::string report(const fs::path& dir) {
  std::vector<fs::path> runs, failed;
  auto consider = [&](const fs::path& d) {
    if (fs::exists(d / "manifest.json")) runs.push_back(d);
    else if (fs::exists(d / "FAILED")) failed.push_back(d);
  };
  if (!fs::is_directory(dir)) throw std::invalid_argument("report: no directory '" + dir.string() + "'");
  consider(dir);
  if (runs.empty() && failed.empty()) {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory()) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& d : subdirs) consider(d);
  }
  std::ostringstream os;
  os << "# Experiment report\n\n" << runs.size() << " experiment" << (runs.size() == 1 ? "" : "s") << " found in "
     << dir.string() << ".\n\n";
  for (const auto& d : runs) {
    try {
      os << section(RunManifest::load(d)) << "\n";
    } catch (const std::exception& e) {
      os << "## " << d.filename().string() << "\n\nUnreadable run: " << e.what() << "\n\n";
    }
  }
  for (const auto& d : failed) {
    std::ifstream in(d / "FAILED");
    std::string why;
    std::getline(in, why);
    os << "## " << d.filename().string() << " (FAILED)\n\n" << why << "\n\n";
  }
  return os.str();
}

}  // namespace anchorlab
