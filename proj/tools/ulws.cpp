// ulws: preprocess Sleep-EDF recordings, count model complexity, train with
// subject-wise cross-validation, evaluate pooled predictions, and predict.
// Data goes to stdout, diagnostics to stderr.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ulw/ulw.hpp"

#ifndef ULWS_VERSION
#define ULWS_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace ulw;

namespace {

std::string command_line;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) fail(Errc::Io, "cannot append to '" + path.string() + "'");
  out << line << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// ------------------------------------------------------------- predictions

std::string prediction_header() { return "index,subject,true,predicted,p_W,p_N1,p_N2,p_N3,p_REM\n"; }

std::string prediction_rows(const EpochDataset& ds, std::span<const std::size_t> idx, const Tensor2<float>& probs) {
  std::string out;
  const auto pred = argmax_rows(probs);
  char buf[64];
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out += std::to_string(idx[r]) + ',' + ds.subject_keys[idx[r]] + ',' +
           std::to_string(static_cast<int>(ds.y[idx[r]])) + ',' + std::to_string(pred[r]);
    for (const float p : probs.row(r)) {
      std::snprintf(buf, sizeof buf, ",%.8f", static_cast<double>(p));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FoldPredictions read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open '" + path.string() + "'");
  FoldPredictions fp;
  std::string line;
  std::getline(in, line);  // header
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() < 4)
      fail(Errc::MalformedField, path.string() + ":" + std::to_string(line_no) + ": expected at least 4 columns");
    try {
      fp.y_true.push_back(std::stoi(cols[2]));
      fp.y_pred.push_back(std::stoi(cols[3]));
    } catch (const std::exception&) {
      fail(Errc::MalformedField, path.string() + ":" + std::to_string(line_no) + ": non-integer label");
    }
  }
  return fp;
}

// ------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string data_dir;
  std::string out;
  std::string channels;
  bool filter_all = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  PreprocessOptions opts;
  if (!a.channels.empty()) opts.channels = split_list(a.channels);
  opts.filter_all_channels = a.filter_all;

  if (!fs::is_directory(a.data_dir)) fail(Errc::Io, "'" + a.data_dir + "' is not a directory");
  // Sleep-EDF pairs SC4001E0-PSG.edf with SC4001EC-Hypnogram.edf: the first
  // seven characters identify the recording.
  std::map<std::string, fs::path> psg, hyp;
  for (const auto& entry : fs::directory_iterator(a.data_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.size() < 7) continue;
    if (name.ends_with("-PSG.edf")) psg[name.substr(0, 7)] = entry.path();
    else if (name.ends_with("-Hypnogram.edf")) hyp[name.substr(0, 7)] = entry.path();
  }
  if (psg.empty() && hyp.empty()) fail(Errc::Io, "no records found in '" + a.data_dir + "'");

  std::size_t skipped = 0;
  for (const auto& [key, path] : hyp)
    if (!psg.count(key)) {
      std::cerr << "warning: " << path.filename().string() << ": no matching PSG file, skipped\n";
      ++skipped;
    }

  struct Part {
    std::string subject;
    int night;
    EpochDataset data;
  };
  std::vector<Part> parts;
  for (const auto& [key, path] : psg) {
    const auto it = hyp.find(key);
    if (it == hyp.end()) {
      std::cerr << "warning: " << path.filename().string() << ": no matching hypnogram, skipped\n";
      ++skipped;
      continue;
    }
    try {
      const auto rec = edf::load_record(path, it->second, opts.channels);
      RecordStats stats;
      auto ds = preprocess_record(rec, opts, &stats);
      std::cout << path.filename().string() << " subject=" << rec.subject_key << " night=" << rec.night
                << " labeled=" << stats.labeled_epochs << " excluded=" << stats.excluded_epochs
                << " retained=" << stats.retained_epochs << '\n';
      parts.push_back({rec.subject_key, rec.night, std::move(ds)});
    } catch (const Error& e) {
      std::cerr << "warning: " << path.filename().string() << ": " << e.what() << ", skipped\n";
      ++skipped;
    }
  }
  if (parts.empty()) fail(Errc::Io, "no usable records found in '" + a.data_dir + "'");

  std::sort(parts.begin(), parts.end(),
            [](const Part& x, const Part& y) { return std::tie(x.subject, x.night) < std::tie(y.subject, y.night); });
  std::vector<EpochDataset> datasets;
  for (auto& p : parts) datasets.push_back(std::move(p.data));
  const auto ds = concat_datasets(datasets, opts.channels);
  write_cache(ds, a.out);

  std::cout << "records: " << parts.size() << '\n';
  std::cout << "epochs: " << ds.size() << '\n';
  std::cout << "subjects: " << unique_subjects(ds).size() << '\n';
  std::cout << "skipped: " << skipped << '\n';
  return 0;
}

// ------------------------------------------------------------------ count

struct ModelArgs {
  std::string config;
  std::string conv_type;
  std::string filters;
  std::optional<std::size_t> kernel_size, pool_size, pool_stride, channels, input_length;
};

ModelConfig resolve_model_config(const ModelArgs& a, const Json* defaults_from = nullptr) {
  Json j = a.config.empty() ? Json::object() : read_json_file(a.config);
  if (defaults_from && j.is_object())
    for (const auto& [k, v] : defaults_from->items())
      if (!j.contains(k)) j[k] = v;
  if (!a.conv_type.empty()) j["conv_type"] = a.conv_type;
  if (!a.filters.empty()) {
    std::vector<std::size_t> f;
    for (const auto& s : split_list(a.filters)) {
      try {
        f.push_back(std::stoul(s));
      } catch (const std::exception&) {
        fail(Errc::BadConfig, "--filters entry '" + s + "' is not a number");
      }
    }
    j["filters"] = f;
    j["n_blocks"] = f.size();
  }
  if (a.kernel_size) j["kernel_size"] = *a.kernel_size;
  if (a.pool_size) j["pool_size"] = *a.pool_size;
  if (a.pool_stride) j["pool_stride"] = *a.pool_stride;
  if (a.channels) j["n_input_channels"] = *a.channels;
  if (a.input_length) j["input_length"] = *a.input_length;
  return model_config_from_json(j);
}

Json report_json(const ComplexityReport& r, const ModelConfig& cfg) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"layer", row.layer}, {"params", row.params}, {"flops", row.flops}, {"output", row.output_shape}});
  return Json{{"config", to_json(cfg)},
              {"rows", rows},
              {"total_params", r.total_params},
              {"total_flops", r.total_flops},
              {"convention", r.convention}};
}

int cmd_count(const ModelArgs& a, bool as_json) {
  const auto cfg = resolve_model_config(a);
  const auto r = analyze_complexity(cfg);
  if (as_json) {
    std::cout << report_json(r, cfg).dump(2) << '\n';
    return 0;
  }
  std::size_t width = 5;
  for (const auto& row : r.rows) width = std::max(width, row.layer.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %10s %14s  %s\n", int(width), "layer", "params", "flops", "output");
  std::cout << buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %10llu %14llu  %s\n", int(width), row.layer.c_str(),
                  static_cast<unsigned long long>(row.params), static_cast<unsigned long long>(row.flops),
                  row.output_shape.c_str());
    std::cout << buf;
  }
  std::cout << "convention: " << r.convention << '\n';
  std::snprintf(buf, sizeof buf, "total_flops %llu (%.2fM)\n", static_cast<unsigned long long>(r.total_flops),
                double(r.total_flops) / 1e6);
  std::cout << buf;
  std::cout << "total_params " << r.total_params << '\n';
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string cache;
  std::string model_config;
  std::string train_config;
  std::size_t folds = 10;
  std::string fold = "all";
  std::string out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const auto cache_bytes = read_file(a.cache);
  const auto ds = decode_cache(cache_bytes);
  ds.check_invariants();

  // Channel count and epoch length default to the cache's shape.
  const Json shape{{"n_input_channels", ds.x.channels()}, {"input_length", ds.x.length()}};
  ModelArgs margs;
  margs.config = a.model_config;
  const auto mcfg = resolve_model_config(margs, &shape);

  TrainConfig tcfg = a.train_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(a.train_config));
  if (a.epochs) tcfg.epochs = *a.epochs;
  if (a.seed) tcfg.seed = *a.seed;
  apply_seed_override(tcfg);

  const auto folds = subject_folds(unique_subjects(ds), a.folds, tcfg.seed);
  std::vector<std::size_t> selected;
  if (a.fold == "all") {
    for (std::size_t i = 0; i < folds.size(); ++i) selected.push_back(i);
  } else {
    std::size_t i = 0;
    try {
      i = std::stoul(a.fold);
    } catch (const std::exception&) {
      fail(Errc::BadConfig, "--fold must be an index or 'all', got '" + a.fold + "'");
    }
    if (i >= folds.size()) fail(Errc::BadConfig, "--fold " + a.fold + " out of range for " + std::to_string(folds.size()) + " folds");
    selected.push_back(i);
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  const auto started = utc_now();
  Json fold_records = Json::array();

  for (const auto i : selected) {
    const auto& split = folds[i];
    TrainConfig fold_cfg = tcfg;
    fold_cfg.seed = tcfg.seed + i;
    const auto idx = split_indices(ds, split);
    std::cerr << "fold " << i << ": " << split.train_subjects.size() << " train subjects (" << idx.train.size()
              << " epochs), " << split.test_subjects.size() << " test subjects (" << idx.test.size() << " epochs)\n";

    std::string history;
    TrainResult<float> result;
    try {
      result = train_fold<float>(ds, split, mcfg, fold_cfg, [&](const EpochStats& s, const ModelParams<float>&) {
        const Json line{{"epoch", s.epoch}, {"lr", s.lr}, {"train_loss", s.train_loss}, {"test_acc", s.test_acc}};
        history += line.dump() + '\n';
        char buf[128];
        std::snprintf(buf, sizeof buf, "fold %zu epoch %zu lr %.3g loss %.4f test_acc %.4f\n", i, s.epoch, s.lr,
                      s.train_loss, s.test_acc);
        std::cerr << buf;
        return true;
      });
    } catch (const Error& e) {
      fail(e.code(), "fold " + std::to_string(i) + ": " + e.what());
    }

    const auto stem = "fold_" + std::to_string(i);
    save_checkpoint(result.params, (out / (stem + ".ulwm")).string());
    write_text(out / (stem + "_history.jsonl"), history);
    const auto probs = predict_dataset(result.params, ds, idx.test);
    write_text(out / (stem + "_predictions.csv"), prediction_header() + prediction_rows(ds, idx.test, probs));
    fold_records.push_back(
        {{"fold", i}, {"seed", fold_cfg.seed}, {"train_subjects", split.train_subjects}, {"test_subjects", split.test_subjects}});
    std::cout << stem << " test_acc " << (result.history.empty() ? 0.0 : result.history.back().test_acc) << '\n';
  }

  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", crc32(cache_bytes));
  const Json manifest{{"command", command_line},
                      {"version", ULWS_VERSION},
                      {"cache", a.cache},
                      {"cache_crc32", crc},
                      {"model_config", to_json(mcfg)},
                      {"train_config", to_json(tcfg)},
                      {"base_seed", tcfg.seed},
                      {"n_folds", folds.size()},
                      {"folds", fold_records},
                      {"decisions",
                       {{"bn_epsilon", mcfg.bn_epsilon},
                        {"bn_momentum", mcfg.bn_momentum},
                        {"lr_schedule", "cosine per epoch, eta_min 0"},
                        {"fold_seed", "base_seed + fold_index"},
                        {"aggregation", "pooled confusion matrix"},
                        {"returned_params", "final epoch"}}}};
  append_line(out / "manifest.jsonl", manifest.dump());
  append_line(out / "timestamps.jsonl", Json{{"command", command_line}, {"started", started}, {"finished", utc_now()}}.dump());
  return 0;
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::vector<std::string> predictions;
  bool strict = false;
  bool json = false;
  std::string model_config;
};

int cmd_evaluate(const EvaluateArgs& a) {
  static const std::regex fold_file(R"(fold_(\d+)_predictions\.csv)");
  std::vector<fs::path> files;
  std::optional<ModelConfig> cfg;
  for (const auto& p : a.predictions) {
    const fs::path path(p);
    if (fs::is_directory(path)) {
      std::map<std::size_t, fs::path> found;
      for (const auto& entry : fs::directory_iterator(path)) {
        std::smatch m;
        const auto name = entry.path().filename().string();
        if (std::regex_match(name, m, fold_file)) found[std::stoul(m[1])] = entry.path();
      }
      std::optional<std::size_t> expected;
      if (fs::exists(path / "manifest.jsonl")) {
        std::ifstream in(path / "manifest.jsonl");
        std::string last;
        for (std::string line; std::getline(in, line);)
          if (!line.empty()) last = line;
        if (!last.empty()) {
          const auto m = parse_json_text(last, (path / "manifest.jsonl").string());
          expected = m.value("n_folds", std::size_t{0});
          if (!cfg && m.contains("model_config")) cfg = model_config_from_json(m["model_config"]);
        }
      }
      const std::size_t upto = expected ? *expected : (found.empty() ? 0 : found.rbegin()->first + 1);
      for (std::size_t i = 0; i < upto; ++i)
        if (!found.count(i)) {
          const auto msg = "fold " + std::to_string(i) + " predictions missing in '" + path.string() + "'";
          if (a.strict) fail(Errc::Io, msg);
          std::cerr << "warning: " << msg << '\n';
        }
      for (const auto& [i, f] : found) files.push_back(f);
    } else if (fs::exists(path)) {
      files.push_back(path);
    } else {
      if (a.strict) fail(Errc::Io, "predictions file '" + p + "' not found");
      std::cerr << "warning: predictions file '" << p << "' not found, ignored\n";
    }
  }
  if (files.empty()) fail(Errc::Io, "no prediction files found");

  std::vector<FoldPredictions> folds;
  for (const auto& f : files) folds.push_back(read_predictions(f));
  const auto r = aggregate_folds(folds);

  if (!a.model_config.empty()) cfg = model_config_from_json(read_json_file(a.model_config));
  const bool default_cfg = !cfg;
  if (!cfg) cfg = ModelConfig{};
  const auto cx = analyze_complexity(*cfg);

  if (a.json) {
    Json per_class = Json::object();
    for (std::size_t c = 0; c < kNumStages; ++c) per_class[std::string(kStageNames[c])] = r.per_class_f1[c];
    const Json out{{"aggregation", "pooled confusion matrix"},
                   {"n_folds", folds.size()},
                   {"n_epochs", r.n_epochs},
                   {"accuracy", r.accuracy},
                   {"macro_f1", r.macro_f1},
                   {"kappa", r.kappa},
                   {"per_class_f1", per_class},
                   {"params", cx.total_params},
                   {"flops", cx.total_flops}};
    std::cout << out.dump(2) << '\n';
    return 0;
  }
  char buf[256];
  std::cout << "aggregation: pooled confusion matrix over " << folds.size() << " fold file(s), " << r.n_epochs
            << " epochs\n";
  if (default_cfg) std::cout << "params/flops: default model config\n";
  std::snprintf(buf, sizeof buf, "%7s %7s %6s %6s %6s %6s %6s %6s %8s %8s\n", "ACC(%)", "MF1(%)", "kappa", "W", "N1",
                "N2", "N3", "REM", "Params", "FLOPs");
  std::cout << buf;
  std::snprintf(buf, sizeof buf, "%7.1f %7.1f %6.3f %6.1f %6.1f %6.1f %6.1f %6.1f %7.1fK %7.2fM\n", 100 * r.accuracy,
                100 * r.macro_f1, r.kappa, 100 * r.per_class_f1[0], 100 * r.per_class_f1[1], 100 * r.per_class_f1[2],
                100 * r.per_class_f1[3], 100 * r.per_class_f1[4], double(cx.total_params) / 1e3,
                double(cx.total_flops) / 1e6);
  std::cout << buf;
  return 0;
}

// ---------------------------------------------------------------- predict

int cmd_predict(const std::string& checkpoint, const std::string& cache, const std::string& out) {
  const auto params = load_checkpoint<float>(checkpoint);
  const auto ds = read_cache(cache);
  if (ds.x.channels() != params.config.n_input_channels || ds.x.length() != params.config.input_length)
    fail(Errc::ShapeMismatch, "cache epochs are " + std::to_string(ds.x.channels()) + "x" +
                                  std::to_string(ds.x.length()) + ", checkpoint expects " +
                                  std::to_string(params.config.n_input_channels) + "x" +
                                  std::to_string(params.config.input_length));
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto text = prediction_header() + prediction_rows(ds, idx, predict_dataset(params, ds, idx));
  if (out.empty() || out == "-") std::cout << text;
  else write_text(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Lightweight multimodal sleep stage scoring"};
  app.set_version_flag("--version", ULWS_VERSION);
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Build an epoch cache from a Sleep-EDF directory");
  pre_cmd->add_option("--data-dir", pre.data_dir, "Directory holding *-PSG.edf / *-Hypnogram.edf pairs")->required();
  pre_cmd->add_option("--out", pre.out, "Output cache file")->required();
  pre_cmd->add_option("--channels", pre.channels, "Comma-separated channel labels");
  pre_cmd->add_flag("--filter-all-channels", pre.filter_all, "Band-pass every channel, not only EEG");

  ModelArgs cnt;
  bool cnt_json = false;
  auto* cnt_cmd = app.add_subcommand("count", "Report parameters and FLOPs of a model configuration");
  cnt_cmd->add_option("--config", cnt.config, "Model config JSON");
  cnt_cmd->add_flag("--json", cnt_json, "Emit JSON");
  cnt_cmd->add_option("--conv-type", cnt.conv_type, "separable or standard");
  cnt_cmd->add_option("--filters", cnt.filters, "Comma-separated filter counts, one per block");
  cnt_cmd->add_option("--kernel-size", cnt.kernel_size);
  cnt_cmd->add_option("--pool-size", cnt.pool_size);
  cnt_cmd->add_option("--pool-stride", cnt.pool_stride);
  cnt_cmd->add_option("--channels", cnt.channels, "Number of input channels");
  cnt_cmd->add_option("--input-length", cnt.input_length, "Samples per epoch");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Subject-wise cross-validated training");
  tr_cmd->add_option("--cache", tr.cache, "Epoch cache from preprocess")->required();
  tr_cmd->add_option("--model-config", tr.model_config, "Model config JSON");
  tr_cmd->add_option("--train-config", tr.train_config, "Training config JSON");
  tr_cmd->add_option("--folds", tr.folds, "Number of subject-wise folds")->capture_default_str();
  tr_cmd->add_option("--fold", tr.fold, "Fold index or 'all'")->capture_default_str();
  tr_cmd->add_option("--out", tr.out, "Output directory")->required();
  tr_cmd->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  tr_cmd->add_option("--seed", tr.seed, "Override the configured base seed");

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Pool fold predictions and report metrics");
  ev_cmd->add_option("--predictions", ev.predictions, "Training output directory or prediction CSV files")
      ->required();
  ev_cmd->add_flag("--strict", ev.strict, "Fail when a fold's predictions are missing");
  ev_cmd->add_flag("--json", ev.json, "Emit JSON");
  ev_cmd->add_option("--model-config", ev.model_config, "Model config for the Params/FLOPs columns");

  std::string pr_checkpoint, pr_cache, pr_out;
  auto* pr_cmd = app.add_subcommand("predict", "Per-epoch stage predictions from a checkpoint");
  pr_cmd->add_option("--checkpoint", pr_checkpoint)->required();
  pr_cmd->add_option("--cache", pr_cache)->required();
  pr_cmd->add_option("--out", pr_out, "Output CSV (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre_cmd) return cmd_preprocess(pre);
    if (*cnt_cmd) return cmd_count(cnt, cnt_json);
    if (*tr_cmd) return cmd_train(tr);
    if (*ev_cmd) return cmd_evaluate(ev);
    if (*pr_cmd) return cmd_predict(pr_checkpoint, pr_cache, pr_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
