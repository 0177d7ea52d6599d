#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sparsecbct/commands.hpp"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/parallel.hpp"

namespace cli = sparsecbct::cli;

namespace {

template <typename T>
std::optional<T> opt(const CLI::Option* o, const T& value) {
  return o->count() > 0 ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view CBCT simulation, FDK reconstruction and InDI restoration"};
  app.require_subcommand(1);
  app.fallthrough();
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution (same as TOOLKIT_DETERMINISTIC=1)");

  std::string config, manifest, data, val, out, checkpoint, input, pred, target, mask = "auto", steps_text;
  std::size_t n_samples = 0, epochs = 0, max_pairs = 0, steps = 2, max_samples = 0;
  bool baseline = false, quiet = false;
  std::vector<std::string> inputs;

  auto* sim = app.add_subcommand("simulate", "Generate phantoms, projections and sparse/dense FDK pairs");
  auto* sim_config = sim->add_option("--config", config, "Experiment config JSON (uses its 'dataset' section)");
  auto* sim_manifest = sim->add_option("--manifest", manifest, "Dataset manifest to regenerate");
  sim->add_option("--out", out, "Output directory")->required();
  auto* sim_n = sim->add_option("--samples", n_samples, "Override the number of pairs");
  sim_config->excludes(sim_manifest);

  auto* tr = app.add_subcommand("train", "Train the time-conditioned denoiser");
  auto* tr_data = tr->add_option("--data", data, "Training dataset manifest");
  auto* tr_val = tr->add_option("--val", val, "Held-out dataset manifest for per-epoch validation");
  auto* tr_config = tr->add_option("--config", config, "Experiment config JSON (default: desk settings)");
  auto* tr_manifest = tr->add_option("--manifest", manifest, "Train manifest to rerun");
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_flag("--baseline-unet", baseline, "Disable the time embedding (plain U-Net regression)");
  auto* tr_epochs = tr->add_option("--epochs", epochs, "Override training.epochs");
  auto* tr_pairs = tr->add_option("--max-pairs", max_pairs, "Use only the first N training pairs");
  tr->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* rs = app.add_subcommand("restore", "Restore a sparse-view volume with N sampling steps");
  auto* rs_ckpt = rs->add_option("--checkpoint", checkpoint, "Checkpoint (.ckpt)");
  auto* rs_input = rs->add_option("--input", input, "Input HU volume (.vol)");
  auto* rs_manifest = rs->add_option("--manifest", manifest, "Restore manifest to rerun");
  rs->add_option("--out", out, "Output volume (.vol)")->required();
  auto* rs_steps = rs->add_option("--steps", steps, "Sampling steps N")->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "Compare a volume against a reference");
  auto* ev_pred = ev->add_option("--pred", pred, "Predicted volume");
  auto* ev_target = ev->add_option("--target", target, "Reference volume (also defines the body mask)");
  auto* ev_manifest = ev->add_option("--manifest", manifest, "Evaluate manifest to rerun");
  ev->add_option("--mask", mask, "auto (Otsu body mask) or none")->capture_default_str();
  auto* ev_out = ev->add_option("--out", out, "CSV output; a JSON report and manifest are written next to it");

  auto* sw = app.add_subcommand("sweep-steps", "Metrics over a range of sampling step counts");
  auto* sw_ckpt = sw->add_option("--checkpoint", checkpoint, "Checkpoint (.ckpt)");
  auto* sw_data = sw->add_option("--data", data, "Evaluation dataset manifest");
  auto* sw_manifest = sw->add_option("--manifest", manifest, "Sweep manifest to rerun");
  sw->add_option("--out", out, "Output directory")->required();
  steps_text = "1,2,3,5,10,20,30";
  sw->add_option("--steps", steps_text, "Step counts, e.g. 1,2,5-10")->capture_default_str();
  auto* sw_max = sw->add_option("--max-samples", max_samples, "Evaluate only the first N pairs");

  auto* rp = app.add_subcommand("report", "Summarize CSV outputs and manifests as Markdown");
  rp->add_option("inputs", inputs, "CSV and manifest files")->required();
  rp->add_option("--out", out, "Markdown output (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (deterministic) sparsecbct::parallel::set_deterministic(true);

  try {
    if (sim->parsed()) {
      cli::SimulateOptions o;
      o.config = opt<std::filesystem::path>(sim_config, config);
      o.manifest = opt<std::filesystem::path>(sim_manifest, manifest);
      o.out_dir = out;
      o.n_samples = opt(sim_n, n_samples);
      const auto m = cli::cmd_simulate(o);
      std::cout << "wrote " << m.at("samples").size() << " pairs to " << out << "\n";
    } else if (tr->parsed()) {
      cli::TrainOptions o;
      o.data = opt<std::filesystem::path>(tr_data, data);
      o.val = opt<std::filesystem::path>(tr_val, val);
      o.config = opt<std::filesystem::path>(tr_config, config);
      o.manifest = opt<std::filesystem::path>(tr_manifest, manifest);
      o.out_dir = out;
      o.baseline_unet = baseline;
      o.epochs = opt(tr_epochs, epochs);
      o.max_pairs = opt(tr_pairs, max_pairs);
      o.quiet = quiet;
      const auto m = cli::cmd_train(o);
      std::cout << "checkpoint " << (std::filesystem::path(out) / "model.ckpt").string() << " after "
                << m.at("optimizer_steps").get<std::uint64_t>() << " optimizer steps\n";
    } else if (rs->parsed()) {
      cli::RestoreOptions o;
      o.checkpoint = opt<std::filesystem::path>(rs_ckpt, checkpoint);
      o.input = opt<std::filesystem::path>(rs_input, input);
      o.manifest = opt<std::filesystem::path>(rs_manifest, manifest);
      o.output = out;
      o.steps = opt(rs_steps, steps);
      cli::cmd_restore(o);
      std::cout << "wrote " << out << "\n";
    } else if (ev->parsed()) {
      cli::EvaluateOptions o;
      o.pred = opt<std::filesystem::path>(ev_pred, pred);
      o.target = opt<std::filesystem::path>(ev_target, target);
      o.manifest = opt<std::filesystem::path>(ev_manifest, manifest);
      o.mask = cli::mask_mode_from_string(mask);
      o.output = opt<std::filesystem::path>(ev_out, out);
      std::cout << cli::cmd_evaluate(o);
    } else if (sw->parsed()) {
      cli::SweepOptions o;
      o.checkpoint = opt<std::filesystem::path>(sw_ckpt, checkpoint);
      o.data = opt<std::filesystem::path>(sw_data, data);
      o.manifest = opt<std::filesystem::path>(sw_manifest, manifest);
      o.out_dir = out;
      o.steps = cli::parse_step_list(steps_text);
      o.max_samples = opt(sw_max, max_samples);
      cli::cmd_sweep_steps(o);
      std::cout << sparsecbct::read_text(std::filesystem::path(out) / "sweep.csv");
    } else if (rp->parsed()) {
      cli::ReportOptions o;
      for (const auto& s : inputs) o.inputs.emplace_back(s);
      o.output = out;
      const std::string text = cli::cmd_report(o);
      if (out.empty()) std::cout << text;
    }
  } catch (const sparsecbct::Error& e) {
    std::cerr << "error (" << sparsecbct::to_string(e.kind()) << "): " << e.what() << "\n";
    return e.kind() == sparsecbct::ErrorKind::Validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
