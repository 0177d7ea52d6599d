#include "sparsecbct/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/version.hpp"

namespace sparsecbct::cli {

namespace {

const std::set<std::string> kExperimentKeys{"dataset", "denoiser", "training", "restore_steps"};

std::string file_hash(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "file not found: " + path.string());
  return sha256_file(path);
}

fs::path absolute_path(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + dir.string());
}

json read_manifest(const fs::path& path, const char* kind) {
  const json m = read_json(path);
  require(m.is_object() && m.value("kind", "") == kind,
          std::string("not a ") + kind + " manifest: " + path.string());
  return m;
}

/// Verifies that an input referenced by a manifest is unchanged.
void check_hash(const json& entry, const char* what, bool artifact) {
  const fs::path p = entry.at("path").get<std::string>();
  const std::string expected = entry.at("sha256").get<std::string>();
  const std::string actual = artifact ? artifact_hash(p) : file_hash(p);
  if (actual != expected) {
    fail(ErrorKind::Validation, std::string(what) + " changed since the manifest was written: " + p.string());
  }
}

json file_entry(const fs::path& p, bool artifact) {
  return {{"path", absolute_path(p).string()}, {"sha256", artifact ? artifact_hash(p) : file_hash(p)}};
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  fs::path stem = p;
  stem.replace_extension();
  return stem.string() + suffix;
}

std::string fmt(double v) { return format_metric(v); }

}  // namespace

// ---- Experiment config ----------------------------------------------------

void ExperimentConfig::validate() const {
  dataset.validate();
  denoiser.validate();
  training.validate();
  require(restore_steps >= 1, "restore_steps: must be >= 1");
  denoiser.check_input(dataset.grid.dims);
}

json to_json(const ExperimentConfig& c) {
  return {{"dataset", to_json(c.dataset)},
          {"denoiser", to_json(c.denoiser)},
          {"training", to_json(c.training)},
          {"restore_steps", c.restore_steps}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  require(j.is_object(), "config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    require(kExperimentKeys.count(key) == 1, "config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"));
  if (j.contains("denoiser")) c.denoiser = denoiser_config_from_json(j.at("denoiser"));
  if (j.contains("training")) c.training = training_config_from_json(j.at("training"));
  if (j.contains("restore_steps")) {
    const json& v = j.at("restore_steps");
    require(v.is_number_integer() && v.get<long long>() >= 1, "restore_steps: must be an integer >= 1");
    c.restore_steps = v.get<std::size_t>();
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_json(path));
}

// ---- simulate -------------------------------------------------------------

json cmd_simulate(const SimulateOptions& o) {
  require(o.config.has_value() != o.manifest.has_value(), "simulate: give exactly one of --config or --manifest");
  DatasetConfig config;
  if (o.config) {
    config = load_experiment_config(*o.config).dataset;
  } else {
    const json m = read_manifest(*o.manifest, kDatasetManifestKind);
    config = dataset_config_from_json(m.at("config"));
  }
  if (o.n_samples) config.n_samples = *o.n_samples;
  return make_dataset(config, o.out_dir);
}

// ---- train ----------------------------------------------------------------

namespace {

std::vector<TrainingPair> load_pairs(const fs::path& manifest, std::optional<std::size_t> limit) {
  const auto samples = load_dataset(manifest);
  const std::size_t n = std::min(samples.size(), limit.value_or(samples.size()));
  std::vector<TrainingPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back(make_training_pair(samples[i]));
  return pairs;
}

}  // namespace

json cmd_train(const TrainOptions& o) {
  ExperimentConfig config;
  fs::path data, val;
  std::optional<std::size_t> max_pairs = o.max_pairs;
  if (o.manifest) {
    require(!o.data && !o.config, "train: --manifest cannot be combined with --data or --config");
    const json m = read_manifest(*o.manifest, kTrainManifestKind);
    config = experiment_config_from_json(m.at("config"));
    check_hash(m.at("data"), "training data manifest", false);
    data = m.at("data").at("path").get<std::string>();
    if (m.contains("val")) {
      check_hash(m.at("val"), "validation data manifest", false);
      val = m.at("val").at("path").get<std::string>();
    }
    if (m.contains("max_pairs")) max_pairs = m.at("max_pairs").get<std::size_t>();
  } else {
    require(o.data.has_value(), "train: --data is required");
    if (o.config) config = load_experiment_config(*o.config);
    data = *o.data;
    if (o.val) val = *o.val;
  }
  if (o.baseline_unet) config.denoiser.with_time_embedding = false;
  if (o.epochs) config.training.epochs = *o.epochs;
  config.training.validate();
  if (max_pairs) require(*max_pairs >= 1, "max_pairs: must be >= 1");

  const auto train_set = load_pairs(data, max_pairs);
  require(!train_set.empty(), "train: dataset has no samples");
  std::vector<TrainingPair> val_set;
  if (!val.empty()) val_set = load_pairs(val, std::nullopt);

  Denoiser<float> net(config.denoiser);
  net.config().check_input(train_set.front().input.dims());
  net.init_params(config.training.seed);

  const TrainingResult result = train(net, train_set, val_set, config.training, [&](const EpochLog& r) {
    if (o.quiet) return;
    std::cerr << "epoch " << r.epoch << "/" << config.training.epochs << "  lr " << fmt(r.lr) << "  train_mae "
              << fmt(r.train_mae) << "  val_psnr_masked " << fmt(r.val_psnr_masked) << std::endl;
  });

  ensure_dir(o.out_dir);
  CheckpointMeta meta;
  meta.seed = config.training.seed;
  meta.step = result.optimizer_steps;
  meta.epoch = config.training.epochs;
  meta.extra = {{"train_pairs", train_set.size()}, {"val_pairs", val_set.size()}};
  save_checkpoint(o.out_dir / "model.ckpt", net, meta);
  write_text(o.out_dir / "train_log.csv", training_log_csv(result.log));

  json m;
  m["kind"] = kTrainManifestKind;
  m["toolkit_version"] = kToolkitVersion;
  m["config"] = to_json(config);
  m["data"] = file_entry(data, false);
  if (!val.empty()) m["val"] = file_entry(val, false);
  if (max_pairs) m["max_pairs"] = *max_pairs;
  m["train_pairs"] = train_set.size();
  m["optimizer_steps"] = result.optimizer_steps;
  m["outputs"] = {{"checkpoint", {{"file", "model.ckpt"}, {"sha256", artifact_hash(o.out_dir / "model.ckpt")}}},
                  {"log", {{"file", "train_log.csv"}, {"sha256", file_hash(o.out_dir / "train_log.csv")}}}};
  if (!result.log.empty()) {
    const EpochLog& last = result.log.back();
    m["final"] = {{"train_mae", last.train_mae},
                  {"val_psnr_masked", std::isfinite(last.val_psnr_masked) ? json(last.val_psnr_masked) : json()}};
  }
  write_json(o.out_dir / "train_manifest.json", m);
  return m;
}

// ---- restore --------------------------------------------------------------

json cmd_restore(const RestoreOptions& o) {
  fs::path checkpoint, input;
  std::size_t steps = o.steps.value_or(2);
  if (o.manifest) {
    require(!o.checkpoint && !o.input, "restore: --manifest cannot be combined with --checkpoint or --input");
    const json m = read_manifest(*o.manifest, kRestoreManifestKind);
    check_hash(m.at("checkpoint"), "checkpoint", true);
    check_hash(m.at("input"), "input volume", true);
    checkpoint = m.at("checkpoint").at("path").get<std::string>();
    input = m.at("input").at("path").get<std::string>();
    steps = m.at("steps").get<std::size_t>();
  } else {
    require(o.checkpoint && o.input, "restore: --checkpoint and --input are required");
    checkpoint = *o.checkpoint;
    input = *o.input;
  }
  require(steps >= 1, "steps: must be >= 1");

  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const VoxelVolume y = read_volume(input);
  require(y.unit() == Unit::HU, "restore: input volume must be tagged HU, got " + to_string(y.unit()));
  const VoxelVolume restored = restore(*ckpt.net, y, steps);
  if (!o.output.parent_path().empty()) ensure_dir(o.output.parent_path());
  write_volume(restored, o.output);

  json m;
  m["kind"] = kRestoreManifestKind;
  m["toolkit_version"] = kToolkitVersion;
  m["checkpoint"] = file_entry(checkpoint, true);
  m["input"] = file_entry(input, true);
  m["steps"] = steps;
  m["output"] = {{"file", o.output.filename().string()}, {"sha256", artifact_hash(o.output)}};
  write_json(sibling(o.output, ".manifest.json"), m);
  return m;
}

// ---- evaluate -------------------------------------------------------------

MaskMode mask_mode_from_string(const std::string& text) {
  if (text == "auto" || text == "body") return MaskMode::Body;
  if (text == "none") return MaskMode::None;
  fail(ErrorKind::Validation, "mask: expected 'auto' or 'none', got '" + text + "'");
}

std::string to_string(MaskMode mode) { return mode == MaskMode::Body ? "auto" : "none"; }

std::string cmd_evaluate(const EvaluateOptions& o) {
  fs::path pred, target;
  MaskMode mode = o.mask;
  if (o.manifest) {
    require(!o.pred && !o.target, "evaluate: --manifest cannot be combined with --pred or --target");
    const json m = read_manifest(*o.manifest, kEvaluateManifestKind);
    check_hash(m.at("pred"), "prediction volume", true);
    check_hash(m.at("target"), "target volume", true);
    pred = m.at("pred").at("path").get<std::string>();
    target = m.at("target").at("path").get<std::string>();
    mode = mask_mode_from_string(m.at("mask").get<std::string>());
  } else {
    require(o.pred && o.target, "evaluate: --pred and --target are required");
    pred = *o.pred;
    target = *o.target;
  }
  const VoxelVolume a = read_volume(pred);
  const VoxelVolume b = read_volume(target);
  const MetricReport report = evaluate_metrics(a, b, mode);
  const std::string csv = csv_header(mode) + "\n" + csv_row(report, mode) + "\n";
  if (o.output) {
    if (!o.output->parent_path().empty()) ensure_dir(o.output->parent_path());
    write_text(*o.output, csv);
    const fs::path report_path = sibling(*o.output, ".json");
    write_json(report_path, to_json(report));
    json m;
    m["kind"] = kEvaluateManifestKind;
    m["toolkit_version"] = kToolkitVersion;
    m["pred"] = file_entry(pred, true);
    m["target"] = file_entry(target, true);
    m["mask"] = to_string(mode);
    m["outputs"] = {{"csv", {{"file", o.output->filename().string()}, {"sha256", file_hash(*o.output)}}},
                    {"report", {{"file", report_path.filename().string()}, {"sha256", file_hash(report_path)}}}};
    write_json(sibling(*o.output, ".manifest.json"), m);
  }
  return csv;
}

// ---- sweep-steps ----------------------------------------------------------

std::vector<std::size_t> parse_step_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) -> std::size_t {
    require(!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }),
            "steps: '" + s + "' is not a positive integer");
    const std::size_t v = std::stoull(s);
    require(v >= 1, "steps: values must be >= 1");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
    } else {
      const std::size_t lo = number(item.substr(0, dash));
      const std::size_t hi = number(item.substr(dash + 1));
      require(lo <= hi, "steps: empty range '" + item + "'");
      for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
    }
  }
  require(!out.empty(), "steps: list is empty");
  std::set<std::size_t> seen;
  for (std::size_t v : out) require(seen.insert(v).second, "steps: duplicate value " + std::to_string(v));
  return out;
}

std::string svg_line_plot(const std::vector<double>& x, const std::vector<double>& y, const std::string& x_label,
                          const std::string& y_label) {
  require(x.size() == y.size() && !x.empty(), "plot: x and y must be non-empty and equally long");
  const double W = 640, H = 400, L = 70, R = 20, T = 20, B = 50;
  auto [x0, x1] = std::minmax_element(x.begin(), x.end());
  double xlo = *x0, xhi = *x1, ylo = 1e300, yhi = -1e300;
  for (double v : y) {
    if (!std::isfinite(v)) continue;
    ylo = std::min(ylo, v);
    yhi = std::max(yhi, v);
  }
  if (ylo > yhi) ylo = 0, yhi = 1;
  if (xhi == xlo) xhi = xlo + 1;
  if (yhi == ylo) yhi = ylo + 1;
  const double pad = 0.05 * (yhi - ylo);
  ylo -= pad;
  yhi += pad;
  auto px = [&](double v) { return L + (v - xlo) / (xhi - xlo) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - ylo) / (yhi - ylo) * (H - T - B); };
  char buf[128];
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (double v : x) {
    std::snprintf(buf, sizeof buf, "%g", v);
    s << "<text x=\"" << px(v) << "\" y=\"" << H - B + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << buf
      << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = ylo + (yhi - ylo) * i / 4.0;
    std::snprintf(buf, sizeof buf, "%.2f", v);
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << buf
      << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" font-size=\"13\" text-anchor=\"middle\">"
    << x_label << "</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(y[i])) continue;
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x[i]), py(y[i]));
    s << buf;
  }
  s << "\"/>\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(y[i])) continue;
    s << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(y[i]) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string center_slice_pgm(const VoxelVolume& vol, double lo, double hi) {
  require(hi > lo, "slice window: hi must exceed lo");
  const Dims3 d = vol.dims();
  const std::size_t k = d.nz / 2;
  std::string out = "P5\n" + std::to_string(d.nx) + " " + std::to_string(d.ny) + "\n255\n";
  out.reserve(out.size() + d.nx * d.ny);
  for (std::size_t j = 0; j < d.ny; ++j) {
    for (std::size_t i = 0; i < d.nx; ++i) {
      const double v = std::clamp((vol.at(i, j, k) - lo) / (hi - lo), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

json cmd_sweep_steps(const SweepOptions& o) {
  fs::path checkpoint, data;
  std::vector<std::size_t> steps = o.steps;
  std::optional<std::size_t> max_samples = o.max_samples;
  if (o.manifest) {
    require(!o.checkpoint && !o.data, "sweep-steps: --manifest cannot be combined with --checkpoint or --data");
    const json m = read_manifest(*o.manifest, kSweepManifestKind);
    check_hash(m.at("checkpoint"), "checkpoint", true);
    check_hash(m.at("data"), "evaluation data manifest", false);
    checkpoint = m.at("checkpoint").at("path").get<std::string>();
    data = m.at("data").at("path").get<std::string>();
    steps = m.at("steps").get<std::vector<std::size_t>>();
    if (m.contains("max_samples")) max_samples = m.at("max_samples").get<std::size_t>();
  } else {
    require(o.checkpoint && o.data, "sweep-steps: --checkpoint and --data are required");
    checkpoint = *o.checkpoint;
    data = *o.data;
  }
  require(!steps.empty(), "steps: list is empty");
  for (std::size_t s : steps) require(s >= 1, "steps: values must be >= 1");

  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  auto samples = load_dataset(data);
  if (max_samples) samples.resize(std::min(samples.size(), *max_samples));
  require(!samples.empty(), "sweep-steps: evaluation set is empty");

  ensure_dir(o.out_dir / "slices");
  struct Sums {
    double mae = 0, psnr = 0, psnr_unmasked = 0, ssim = 0;
  };
  std::vector<Sums> sums(steps.size());
  Sums base;
  auto add = [](Sums& s, const MetricReport& r) {
    s.mae += *r.mae_masked;
    s.psnr += *r.psnr_masked;
    s.psnr_unmasked += r.psnr_unmasked;
    s.ssim += r.ssim;
  };
  char name[96];
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& p = samples[n];
    add(base, evaluate_metrics(p.input, p.target, MaskMode::Body));
    std::snprintf(name, sizeof name, "sample_%04zu_input.pgm", n);
    write_text(o.out_dir / "slices" / name, center_slice_pgm(p.input));
    std::snprintf(name, sizeof name, "sample_%04zu_target.pgm", n);
    write_text(o.out_dir / "slices" / name, center_slice_pgm(p.target));
    for (std::size_t s = 0; s < steps.size(); ++s) {
      const VoxelVolume restored = restore(*ckpt.net, p.input, steps[s]);
      add(sums[s], evaluate_metrics(restored, p.target, MaskMode::Body));
      std::snprintf(name, sizeof name, "sample_%04zu_steps_%02zu.pgm", n, steps[s]);
      write_text(o.out_dir / "slices" / name, center_slice_pgm(restored));
    }
  }

  const double inv = 1.0 / static_cast<double>(samples.size());
  std::ostringstream csv;
  csv << "steps,mae_masked,psnr_masked,psnr_unmasked,ssim\n";
  std::vector<double> xs, ys;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    csv << steps[s] << ',' << fmt(sums[s].mae * inv) << ',' << fmt(sums[s].psnr * inv) << ','
        << fmt(sums[s].psnr_unmasked * inv) << ',' << fmt(sums[s].ssim * inv) << '\n';
    xs.push_back(static_cast<double>(steps[s]));
    ys.push_back(sums[s].psnr * inv);
  }
  write_text(o.out_dir / "sweep.csv", csv.str());
  write_text(o.out_dir / "sweep.svg", svg_line_plot(xs, ys, "sampling steps N", "mean masked PSNR (dB)"));

  json m;
  m["kind"] = kSweepManifestKind;
  m["toolkit_version"] = kToolkitVersion;
  m["checkpoint"] = file_entry(checkpoint, true);
  m["data"] = file_entry(data, false);
  m["steps"] = steps;
  if (max_samples) m["max_samples"] = *max_samples;
  m["samples"] = samples.size();
  m["uncorrected"] = {{"mae_masked", base.mae * inv},
                      {"psnr_masked", base.psnr * inv},
                      {"psnr_unmasked", base.psnr_unmasked * inv},
                      {"ssim", base.ssim * inv}};
  m["outputs"] = {{"csv", {{"file", "sweep.csv"}, {"sha256", file_hash(o.out_dir / "sweep.csv")}}},
                  {"plot", {{"file", "sweep.svg"}, {"sha256", file_hash(o.out_dir / "sweep.svg")}}}};
  write_json(o.out_dir / "sweep_manifest.json", m);
  return m;
}

// ---- report ---------------------------------------------------------------

namespace {

std::string csv_to_markdown(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::size_t cols = 0;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      row += " " + cell + " |";
      ++cols;
    }
    out += row + "\n";
    if (first) {
      out += "|";
      for (std::size_t c = 0; c < cols; ++c) out += " --- |";
      out += "\n";
      first = false;
    }
  }
  return out;
}

std::string manifest_summary(const json& m) {
  std::ostringstream s;
  s << "- kind: `" << m.value("kind", "unknown") << "`\n";
  if (m.contains("toolkit_version")) s << "- toolkit version: " << m.at("toolkit_version").get<std::string>() << "\n";
  for (const char* key : {"steps", "train_pairs", "optimizer_steps", "mask"}) {
    if (m.contains(key)) s << "- " << key << ": " << m.at(key).dump() << "\n";
  }
  for (const char* key : {"uncorrected", "final"}) {
    if (m.contains(key)) s << "- " << key << ": `" << m.at(key).dump() << "`\n";
  }
  if (m.contains("samples")) {
    const json& n = m.at("samples");
    s << "- samples: " << (n.is_array() ? n.size() : n.get<std::size_t>()) << "\n";
  }
  if (m.contains("outputs")) {
    for (const auto& [name, entry] : m.at("outputs").items()) {
      s << "- " << name << ": `" << entry.value("file", "") << "` sha256 `" << entry.value("sha256", "") << "`\n";
    }
  }
  return s.str();
}

}  // namespace

std::string cmd_report(const ReportOptions& o) {
  require(!o.inputs.empty(), "report: no inputs given");
  std::ostringstream md;
  md << "# sparsecbct report\n\n";
  for (const fs::path& p : o.inputs) {
    if (!fs::exists(p)) fail(ErrorKind::Io, "report input not found: " + p.string());
    md << "## " << p.filename().string() << "\n\n";
    const std::string ext = p.extension().string();
    if (ext == ".csv") {
      md << csv_to_markdown(read_text(p)) << "\n";
    } else if (ext == ".json") {
      md << manifest_summary(read_json(p)) << "\n";
    } else {
      fail(ErrorKind::Validation, "report: unsupported input type '" + ext + "' (expected .csv or .json)");
    }
  }
  const std::string text = md.str();
  if (!o.output.empty()) {
    if (!o.output.parent_path().empty()) ensure_dir(o.output.parent_path());
    write_text(o.output, text);
  }
  return text;
}

}  // namespace sparsecbct::cli
