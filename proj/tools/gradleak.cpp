#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "gradleak/error.hpp"
#include "gradleak/harness.hpp"
#include "gradleak/kernels.hpp"

namespace h = gradleak::harness;

namespace {

std::array<std::size_t, 3> ParseRaster(const std::string& s) {
  std::array<std::size_t, 3> r{};
  std::stringstream in(s);
  std::string part;
  std::size_t i = 0;
  while (std::getline(in, part, ',')) {
    if (i == 3) throw CLI::ValidationError("--raster", "expected channels,height,width");
    r[i++] = std::stoul(part);
  }
  if (i != 3) throw CLI::ValidationError("--raster", "expected channels,height,width");
  return r;
}

void AddModelSpec(CLI::App* sc, h::ModelSpec& spec, std::optional<double>& rate, bool& no_relu) {
  sc->add_option("--dims", spec.dims, "layer widths d0,d1,...,K")->delimiter(',')->required();
  sc->add_option("--model-seed", spec.seed, "model RNG seed");
  sc->add_option("--activation-rate", rate, "calibrate hidden biases to this activation rate");
  sc->add_flag("--no-first-relu", no_relu, "omit the ReLU after the first layer");
}

void AddAttackOptions(CLI::App* sc, gradleak::AttackOptions& o, std::string& policy) {
  sc->add_option("--zero-tol", o.zero_tol, "relative zero threshold");
  sc->add_option("--group-tol", o.group_tol, "relative ratio-matching tolerance");
  sc->add_option("--g1-policy", policy, "two-thirds | bias-refine")
      ->check(CLI::IsMember({"two-thirds", "bias-refine"}));
  sc->add_flag("--strict-subset-sum", o.strict_subset_sum, "fail on ambiguous last-layer subset sums");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient leakage toolkit for ReLU fully-connected networks"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (overrides GRADLEAK_THREADS)");

  h::GenModelConfig gm;
  std::optional<double> gm_rate;
  bool gm_no_relu = false;
  auto* gen_model = app.add_subcommand("gen-model", "generate a random model");
  AddModelSpec(gen_model, gm.spec, gm_rate, gm_no_relu);
  gen_model->add_option("--out", gm.out, "output directory")->required();

  h::GenBatchConfig gb;
  std::string gb_raster;
  std::string gb_curate;
  auto* gen_batch = app.add_subcommand("gen-batch", "generate a uniform batch");
  gen_batch->add_option("--m", gb.spec.m, "batch size")->required();
  gen_batch->add_option("--d0", gb.spec.d0, "input dimension")->required();
  gen_batch->add_option("--k", gb.spec.k, "number of classes")->required();
  gen_batch->add_option("--seed", gb.spec.seed, "RNG seed");
  gen_batch->add_option("--raster", gb_raster, "raster shape channels,height,width");
  gen_batch->add_option("--curate", gb_curate, "model.json to curate an insecure batch for");
  gen_batch->add_option("--max-trials", gb.max_trials, "curation trial budget");
  gen_batch->add_option("--out", gb.out, "output directory")->required();

  h::GradientConfig gr;
  std::optional<double> clip, sigma;
  auto* gradient = app.add_subcommand("gradient", "compute the average gradient of a batch");
  gradient->add_option("--model", gr.model, "model.json")->required()->check(CLI::ExistingFile);
  gradient->add_option("--batch", gr.batch, "batch.json")->required()->check(CLI::ExistingFile);
  gradient->add_option("--dpsgd-clip", clip, "clip the gradient to this global norm");
  gradient->add_option("--dpsgd-sigma", sigma, "Gaussian noise multiplier");
  gradient->add_option("--seed", gr.seed, "noise seed");
  gradient->add_option("--out", gr.out, "output directory")->required();

  h::AttackConfig at;
  std::string at_policy = "bias-refine";
  std::string at_truth;
  std::optional<double> at_beta;
  auto* attack = app.add_subcommand("attack", "reconstruct a batch from its average gradient");
  attack->add_option("--model", at.model, "model.json")->required()->check(CLI::ExistingFile);
  attack->add_option("--gradient", at.gradient, "grad.json")->required()->check(CLI::ExistingFile);
  attack->add_option("--beta", at_beta, "keep only this fraction of the lower weight gradients");
  attack->add_option("--seed", at.seed, "mask seed");
  attack->add_option("--truth", at_truth, "ground-truth batch.json for scoring");
  AddAttackOptions(attack, at.opts, at_policy);
  attack->add_option("--out", at.out, "output directory")->required();

  h::DefendConfig de;
  bool no_box = false;
  auto* defend = app.add_subcommand("defend", "sample gradient-identical artifact batches");
  defend->add_option("--model", de.model, "model.json")->required()->check(CLI::ExistingFile);
  defend->add_option("--batch", de.batch, "batch.json")->required()->check(CLI::ExistingFile);
  defend->add_option("--seed", de.seed, "RNG seed");
  defend->add_option("--samples", de.samples, "number of artifact batches");
  defend->add_flag("--no-box", no_box, "do not rescale into [-1, 1]");
  defend->add_option("--out", de.out, "output directory")->required();

  h::AuditConfig au;
  auto* audit = app.add_subcommand("audit", "classify a batch by its exclusivity");
  audit->add_option("--model", au.model, "model.json")->required()->check(CLI::ExistingFile);
  audit->add_option("--batch", au.batch, "batch.json")->required()->check(CLI::ExistingFile);
  audit->add_option("--out", au.out, "output directory");

  h::StatsConfig st;
  std::optional<double> st_rate;
  bool st_no_relu = false;
  auto* stats = app.add_subcommand("stats", "proportion of insecure batches");
  AddModelSpec(stats, st.model, st_rate, st_no_relu);
  stats->add_option("--widths", st.widths, "first-layer widths")->delimiter(',');
  stats->add_option("--depths", st.depths, "numbers of hidden layers")->delimiter(',');
  stats->add_option("--depth-width", st.depth_width, "hidden width for the depth axis");
  stats->add_option("--batch-size", st.batch_size, "batch size");
  stats->add_option("--trials", st.trials, "sampled batches per point");
  stats->add_option("--seed", st.seed, "sampling seed");
  stats->add_option("--out", st.out, "output directory")->required();

  h::SweepConfig sw;
  std::optional<double> sw_rate;
  bool sw_no_relu = false;
  std::string sw_policy = "bias-refine";
  auto* sweep = app.add_subcommand("sweep", "attack along one experiment axis");
  AddModelSpec(sweep, sw.model, sw_rate, sw_no_relu);
  sweep->add_option("--batch-size", sw.batch_size, "batch size");
  sweep->add_option("--batch-seed", sw.batch_seed, "curation seed");
  sweep->add_option("--max-trials", sw.max_trials, "curation trial budget per point");
  sweep->add_option("--batch-sizes", sw.batch_sizes, "batch-size axis")->delimiter(',');
  sweep->add_option("--widths", sw.widths, "width axis")->delimiter(',');
  sweep->add_option("--depths", sw.depths, "depth axis")->delimiter(',');
  sweep->add_option("--depth-width", sw.depth_width, "hidden width for the depth axis");
  sweep->add_option("--beta", sw.betas, "gradient-proportion axis")->delimiter(',');
  sweep->add_option("--mask-seed", sw.mask_seed, "mask seed shared by all beta points");
  AddAttackOptions(sweep, sw.opts, sw_policy);
  sweep->add_option("--out", sw.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (threads > 0) gradleak::kernels::SetThreads(threads);

  try {
    if (*gen_model) {
      gm.spec.activation_rate = gm_rate;
      gm.spec.first_layer_relu = !gm_no_relu;
      return h::RunGenModel(gm);
    }
    if (*gen_batch) {
      if (!gb_raster.empty()) gb.spec.raster = ParseRaster(gb_raster);
      if (!gb_curate.empty()) gb.curate_model = gb_curate;
      return h::RunGenBatch(gb);
    }
    if (*gradient) {
      gr.dpsgd_clip = clip;
      gr.dpsgd_sigma = sigma;
      return h::RunGradient(gr);
    }
    if (*attack) {
      at.opts.g1_policy = gradleak::ParseG1Policy(at_policy);
      at.beta = at_beta;
      if (!at_truth.empty()) at.truth = at_truth;
      return h::RunAttack(at);
    }
    if (*defend) {
      de.box = !no_box;
      return h::RunDefend(de);
    }
    if (*audit) return h::RunAudit(au);
    if (*stats) {
      st.model.activation_rate = st_rate;
      st.model.first_layer_relu = !st_no_relu;
      return h::RunStats(st);
    }
    if (*sweep) {
      sw.model.activation_rate = sw_rate;
      sw.model.first_layer_relu = !sw_no_relu;
      sw.opts.g1_policy = gradleak::ParseG1Policy(sw_policy);
      return h::RunSweep(sw);
    }
  } catch (const gradleak::NotApplicable& e) {
    std::cerr << "not applicable: " << e.what() << '\n';
    return h::kExitNotApplicable;
  } catch (const gradleak::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return h::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return h::kExitError;
  }
  return h::kExitError;
}
