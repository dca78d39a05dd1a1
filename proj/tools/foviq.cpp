// foviq command-line front end.
//
// Exit codes: 0 success, 2 invalid arguments, 3 data error, 4 numerical failure.

#include <cstdio>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "foviq/fit.hpp"
#include "foviq/fsm.hpp"
#include "foviq/io.hpp"
#include "foviq/pipeline.hpp"

using namespace foviq;

namespace {

// Fill options left unset by the command line and the environment from an
// INI file. Keys may sit at top level or under [pipeline].
void apply_config_file(CLI::App& app, const std::string& path) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::FileError& e) {
    throw DataError(path + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!(item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == app.get_name())))
      throw InvalidArgument(path + ": unknown section for key " + item.fullname());
    CLI::Option* opt = app.get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config") throw InvalidArgument(path + ": unknown key " + item.name);
    if (opt->count() > 0) continue;
    for (const auto& v : item.inputs) opt->add_result(v);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw InvalidArgument(path + ": " + item.name + ": " + e.what());
    }
  }
}

Dims parse_dims(const std::string& text, std::size_t parts) {
  std::vector<std::size_t> v;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t x = text.find('x', pos);
    const std::string tok = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw InvalidArgument("dimensions must look like " + std::string(parts == 3 ? "WxHxD" : "WxH") + ", got '" +
                            text + "'");
    v.push_back(std::stoul(tok));
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  if (v.size() != parts) throw InvalidArgument("expected " + std::to_string(parts) + " dimensions in '" + text + "'");
  return {v[0], v[1], parts == 3 ? v[2] : 1};
}

struct NoiseFlags {
  std::string dims = "256x256x20";
  double mean = 128.0, sd = 25.0, exponent = -2.8;

  void add(CLI::App* app) {
    app->add_option("--dims", dims, "volume size WxHxD")->capture_default_str();
    app->add_option("--mean", mean, "background mean gray level")->capture_default_str();
    app->add_option("--sd", sd, "background standard deviation")->capture_default_str();
    app->add_option("--exponent", exponent, "power-law exponent of the background spectrum")->capture_default_str();
  }
  BackgroundModel model() const { return {parse_dims(dims, 3), mean, sd, exponent}; }
};

struct SignalFlags {
  std::string kind = "mcalc";
  double ppd = 36.0, thickness = 8.0, amplitude = 83.0;

  void add(CLI::App* app, bool with_kind = true) {
    if (with_kind) app->add_option("--signal", kind, "mcalc|mass")->capture_default_str();
    app->add_option("--ppd", ppd, "pixels per degree")->capture_default_str();
    app->add_option("--slice-thickness", thickness, "slice spacing in in-plane pixels")->capture_default_str();
    app->add_option("--amplitude", amplitude, "signal peak amplitude")->capture_default_str();
  }
  SignalOptions options() const {
    SignalOptions o;
    o.px_per_deg = ppd;
    o.slice_thickness_px = thickness;
    o.amplitude = amplitude;
    return o;
  }
  SignalProfile make() const { return make_signal(parse_signal_kind(kind), options()); }
};

struct TimingFlags {
  double fixation_ms = 250.0, response_s = 3.16;
  std::size_t n_slices = 1;
  std::string display = "256x256";

  void add(CLI::App* app) {
    app->add_option("--fix-time-ms", fixation_ms, "median fixation duration")->capture_default_str();
    app->add_option("--resp-time-s", response_s, "median response time")->capture_default_str();
    app->add_option("--slices", n_slices, "slices in the searched volume (3D)")->capture_default_str();
    app->add_option("--display", display, "display size WxH")->capture_default_str();
  }
  SearchTimingParams params(double ppd) const {
    const Dims d = parse_dims(display, 2);
    SearchTimingParams p;
    p.median_fixation_time_ms = fixation_ms;
    p.median_response_time_s = response_s;
    p.n_slices = n_slices;
    p.display_w = d.w;
    p.display_h = d.h;
    p.px_per_deg = ppd;
    return p;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path == "-")
    std::cout << text;
  else
    write_file_atomic(path, text);
}

SignalProfile signal_for(const EccentricityTemplateSet& set, double amplitude) {
  SignalOptions o;
  o.px_per_deg = set.px_per_deg;
  o.slice_thickness_px = set.slice_thickness_px;
  o.amplitude = amplitude;
  return make_signal(set.signal, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foveated model observers: templates, d' curves, weighting schemes and search simulation"};
  app.require_subcommand(1);

  // gen-stimuli
  auto* gen = app.add_subcommand("gen-stimuli", "write seeded signal-present and signal-absent trials (.vol)");
  NoiseFlags gen_noise;
  SignalFlags gen_signal;
  std::string gen_out, gen_modality = "2d";
  std::size_t gen_n = 10, gen_window = 64, gen_stride = 4;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "a .vol file (one background volume) or a directory of trials")->required();
  gen->add_option("--n", gen_n, "trials per class when writing a directory")->capture_default_str();
  gen->add_option("--modality", gen_modality, "2d|3d")->capture_default_str();
  gen->add_option("--window", gen_window, "template window the signal must leave room for")->capture_default_str();
  gen->add_option("--stride", gen_stride, "signal locations lie on this lattice")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen_noise.add(gen);
  gen_signal.add(gen);

  // build-templates
  auto* bt = app.add_subcommand("build-templates", "build and calibrate an eccentricity template set (.tset)");
  NoiseFlags bt_noise;
  SignalFlags bt_signal;
  std::string bt_model = "fcho", bt_modality = "2d", bt_bins = "auto", bt_cov = "nps", bt_out;
  std::size_t bt_window = 64, bt_samples = 0, bt_calibrate = 2000;
  std::uint64_t bt_seed = 0;
  bt->add_option("--model", bt_model, "fcho|fnpwe")->capture_default_str();
  bt->add_option("--modality", bt_modality, "2d|3d")->capture_default_str();
  bt->add_option("--bins", bt_bins, "start:step:stop, or auto")->capture_default_str();
  bt->add_option("--window", bt_window)->capture_default_str();
  bt->add_option("--covariance", bt_cov, "nps|samples")->capture_default_str();
  bt->add_option("--samples", bt_samples, "background patches for --covariance samples (0 = 10x channels)");
  std::string bt_bg_samples;
  bt->add_option("--bg-samples", bt_bg_samples, "background .vol file or directory; implies --covariance samples")
      ->check(CLI::ExistingPath);
  bt->add_option("--calibrate", bt_calibrate, "background patches for per-bin statistics (0 = skip)")
      ->capture_default_str();
  bt->add_option("--seed", bt_seed)->capture_default_str();
  bt->add_option("--out", bt_out)->required();
  bt_noise.add(bt);
  bt_signal.add(bt);

  // dprime-curve
  auto* dc = app.add_subcommand("dprime-curve", "d'_E per eccentricity bin");
  NoiseFlags dc_noise;
  std::string dc_templates, dc_method = "fourier", dc_out = "-";
  std::size_t dc_trials = 1000;
  double dc_amplitude = 83.0;
  std::uint64_t dc_seed = 0;
  dc->add_option("--templates", dc_templates)->required()->check(CLI::ExistingFile);
  std::string dc_signal;
  dc->add_option("--signal", dc_signal, "mcalc|mass (must match the template set)");
  dc->add_option("--method", dc_method, "empirical|analytic|fourier")->capture_default_str();
  dc->add_option("--trials", dc_trials, "per class, empirical only")->capture_default_str();
  dc->add_option("--amplitude", dc_amplitude)->capture_default_str();
  dc->add_option("--seed", dc_seed)->capture_default_str();
  dc->add_option("--out", dc_out)->capture_default_str();
  dc_noise.add(dc);

  // weights
  auto* wt = app.add_subcommand("weights", "eccentricity weights for one scheme");
  TimingFlags wt_timing;
  std::string wt_scheme, wt_bins = "0:1:10", wt_curve, wt_log, wt_modality = "2d", wt_out = "-";
  double wt_ppd = 36.0;
  wt->add_option("--scheme", wt_scheme, "avg|dprime|et|time")->required();
  wt->add_option("--bins", wt_bins)->capture_default_str();
  wt->add_option("--curve", wt_curve, "d' curve (dprime scheme)")->check(CLI::ExistingFile);
  wt->add_option("--log", wt_log, "fixation log, JSON Lines (et scheme)")->check(CLI::ExistingFile);
  wt->add_option("--modality", wt_modality)->capture_default_str();
  wt->add_option("--ppd", wt_ppd)->capture_default_str();
  wt->add_option("--out", wt_out)->capture_default_str();
  wt_timing.add(wt);

  // fom
  auto* fm = app.add_subcommand("fom", "aggregate <d'> from a curve and weights");
  std::string fm_curve, fm_weights, fm_out = "-";
  fm->add_option("--curve", fm_curve)->required()->check(CLI::ExistingFile);
  fm->add_option("--weights", fm_weights)->required()->check(CLI::ExistingFile);
  fm->add_option("--out", fm_out)->capture_default_str();

  // fsm-run
  auto* fs_ = app.add_subcommand("fsm-run", "foveated search model over a stimulus directory");
  TimingFlags fs_timing;
  std::string fs_stimuli, fs_scanpaths, fs_templates, fs_out = "-";
  bool fs_synthetic = false, fs_trace = false;
  double fs_threshold = 1.0;
  std::size_t fs_stride = 4;
  std::uint64_t fs_seed = 0;
  fs_->add_option("--stimuli", fs_stimuli)->required()->check(CLI::ExistingDirectory);
  auto* sp_opt = fs_->add_option("--scanpaths", fs_scanpaths, "fixation log (JSON Lines)")->check(CLI::ExistingFile);
  auto* syn_opt = fs_->add_flag("--synthetic", fs_synthetic, "grid scanpaths from search timing");
  sp_opt->excludes(syn_opt);
  fs_->add_option("--templates", fs_templates, "calibrated template set")->required()->check(CLI::ExistingFile);
  fs_->add_option("--threshold", fs_threshold)->capture_default_str();
  fs_->add_option("--stride", fs_stride)->capture_default_str();
  fs_->add_option("--seed", fs_seed)->capture_default_str();
  fs_->add_flag("--trace", fs_trace, "record the running max log LR per fixation");
  fs_->add_option("--out", fs_out, "verdicts, JSON Lines")->capture_default_str();
  fs_timing.add(fs_);

  // fit
  auto* ft = app.add_subcommand("fit", "negative log-likelihood of reference d' given predictions");
  std::string ft_ref, ft_pred, ft_on = "raw", ft_out = "-";
  ft->add_option("--reference", ft_ref)->required()->check(CLI::ExistingFile);
  ft->add_option("--predictions", ft_pred)->required()->check(CLI::ExistingFile);
  ft->add_option("--on", ft_on, "raw|ratio")->capture_default_str();
  ft->add_option("--out", ft_out)->capture_default_str();

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "full run: templates, curves, weights and <d'> records");
  std::string pl_config;
  pl->add_option("--config", pl_config, "INI-style key = value file; command line and FOVIQ_* variables win");
  RunConfig cfg;
  auto env = [](CLI::Option* o, const std::string& key) { o->envname("FOVIQ_" + key)->capture_default_str(); };
  env(pl->add_option("--px-per-deg,--px_per_deg", cfg.px_per_deg), "PX_PER_DEG");
  env(pl->add_option("--bins", cfg.bins), "BINS");
  env(pl->add_option("--volume-w,--volume_w", cfg.volume_w), "VOLUME_W");
  env(pl->add_option("--volume-h,--volume_h", cfg.volume_h), "VOLUME_H");
  env(pl->add_option("--volume-d,--volume_d", cfg.volume_d), "VOLUME_D");
  env(pl->add_option("--noise-mean,--noise_mean", cfg.noise_mean), "NOISE_MEAN");
  env(pl->add_option("--noise-sd,--noise_sd", cfg.noise_sd), "NOISE_SD");
  env(pl->add_option("--noise-exponent,--noise_exponent", cfg.noise_exponent), "NOISE_EXPONENT");
  env(pl->add_option("--signal-amplitude,--signal_amplitude", cfg.signal_amplitude), "SIGNAL_AMPLITUDE");
  env(pl->add_option("--slice-thickness-px,--slice_thickness_px", cfg.slice_thickness_px), "SLICE_THICKNESS_PX");
  env(pl->add_option("--window", cfg.window), "WINDOW");
  env(pl->add_option("--models", cfg.models)->delimiter(','), "MODELS");
  env(pl->add_option("--signals", cfg.signals)->delimiter(','), "SIGNALS");
  env(pl->add_option("--modalities", cfg.modalities)->delimiter(','), "MODALITIES");
  env(pl->add_option("--schemes", cfg.schemes)->delimiter(','), "SCHEMES");
  env(pl->add_option("--method", cfg.method), "METHOD");
  env(pl->add_option("--covariance", cfg.covariance), "COVARIANCE");
  env(pl->add_option("--covariance-samples,--covariance_samples", cfg.covariance_samples), "COVARIANCE_SAMPLES");
  env(pl->add_option("--trials", cfg.trials), "TRIALS");
  env(pl->add_option("--fixation-ms-2d,--fixation_ms_2d", cfg.fixation_ms_2d), "FIXATION_MS_2D");
  env(pl->add_option("--response-s-2d,--response_s_2d", cfg.response_s_2d), "RESPONSE_S_2D");
  env(pl->add_option("--fixation-ms-3d,--fixation_ms_3d", cfg.fixation_ms_3d), "FIXATION_MS_3D");
  env(pl->add_option("--response-s-3d,--response_s_3d", cfg.response_s_3d), "RESPONSE_S_3D");
  env(pl->add_option("--n-slices-3d,--n_slices_3d", cfg.n_slices_3d), "N_SLICES_3D");
  env(pl->add_option("--display-w,--display_w", cfg.display_w), "DISPLAY_W");
  env(pl->add_option("--display-h,--display_h", cfg.display_h), "DISPLAY_H");
  env(pl->add_option("--seed", cfg.seed), "SEED");
  env(pl->add_option("--out-dir,--out_dir", cfg.out_dir), "OUT_DIR");
  env(pl->add_option("--templates-dir,--templates_dir", cfg.templates_dir), "TEMPLATES_DIR");
  env(pl->add_option("--fixation-log,--fixation_log", cfg.fixation_log), "FIXATION_LOG");
  env(pl->add_option("--save-templates,--save_templates", cfg.save_templates), "SAVE_TEMPLATES");
  env(pl->add_option("--timestamp", cfg.timestamp), "TIMESTAMP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const BackgroundModel bg = gen_noise.model();
      const json header{{"mean", bg.mean}, {"sd", bg.sd}, {"exponent", bg.exponent}, {"seed", gen_seed}};
      if (fs::path(gen_out).extension() == ".vol") {
        save_trial(gen_out, absent_trial(bg.sample(gen_seed).voxels), false, header);
        return 0;
      }
      const Modality modality = parse_modality(gen_modality);
      const SignalProfile signal = gen_signal.make();
      const std::size_t side = template_window_side(signal, gen_window);
      const Dims tdims{side, side, modality == Modality::ThreeD ? signal.voxels.depth() : 1};
      SyntheticTrials trials(bg, signal, modality, tdims, gen_stride, gen_seed);
      fs::create_directories(gen_out);
      for (std::size_t i = 0; i < 2 * gen_n; ++i) {
        TrialStimulus t = trials.make(i, i % 2 == 0);
        char name[32];
        std::snprintf(name, sizeof name, "trial_%06zu.vol", i);
        json h = header;
        h["seed"] = child_seed(gen_seed, i);
        save_trial(fs::path(gen_out) / name, t, false, h);
      }
      json manifest{{"n_per_class", gen_n},           {"modality", gen_modality},
                    {"signal", gen_signal.kind},       {"seed", gen_seed},
                    {"dims", {bg.dims.w, bg.dims.h, bg.dims.d}}, {"mean", bg.mean}, {"sd", bg.sd},
                    {"exponent", bg.exponent},
                    {"px_per_deg", gen_signal.ppd},    {"slice_thickness_px", gen_signal.thickness},
                    {"amplitude", gen_signal.amplitude}};
      save_json(fs::path(gen_out) / "stimuli.json", manifest);
    } else if (*bt) {
      const BackgroundModel bg = bt_noise.model();
      const SignalProfile signal = bt_signal.make();
      const ObserverModel model = parse_observer_model(bt_model);
      const Modality modality = parse_modality(bt_modality);
      const auto bins = bt_bins == "auto" ? display_bins(bg.dims.w, bg.dims.h, bt_signal.ppd) : parse_bins(bt_bins);
      TemplateOptions opt;
      opt.px_per_deg = bt_signal.ppd;
      opt.window = bt_window;
      RunConfig rc;
      rc.px_per_deg = bt_signal.ppd;
      rc.bins = bt_bins;
      rc.volume_w = bg.dims.w;
      rc.volume_h = bg.dims.h;
      rc.volume_d = bg.dims.d;
      rc.noise_mean = bg.mean;
      rc.noise_sd = bg.sd;
      rc.noise_exponent = bg.exponent;
      rc.window = bt_window;
      rc.covariance = bt_cov;
      rc.covariance_samples = bt_samples;
      rc.seed = bt_seed;
      if (bt_cov != "nps" && bt_cov != "samples") throw InvalidArgument("--covariance must be nps or samples");
      BackgroundStats stats = BackgroundStats{Volume{}};
      if (model == ObserverModel::Fcho && !bt_bg_samples.empty()) {
        const std::size_t side = template_window_side(signal, bt_window);
        std::vector<fs::path> files =
            fs::is_directory(bt_bg_samples) ? list_volumes(bt_bg_samples) : std::vector<fs::path>{bt_bg_samples};
        std::vector<Volume> patches;
        for (const auto& f : files) {
          const Volume v = load_trial(f).data;
          for (std::size_t z = 0; z < v.depth(); ++z)
            for (std::size_t y = 0; y + side <= v.height(); y += side)
              for (std::size_t x = 0; x + side <= v.width(); x += side)
                patches.push_back(crop(v, x, y, z, {side, side, 1}));
        }
        if (bt_samples && patches.size() > bt_samples) patches.resize(bt_samples);
        stats = std::move(patches);
      } else if (model == ObserverModel::Fcho) {
        stats = template_background(rc, signal);
      }
      EccentricityTemplateSet set = build_template_set(model, signal, modality, stats, bins, opt);
      if (bt_calibrate) calibrate_bin_stats(set, signal, bg, bt_calibrate, child_seed(bt_seed, 1));
      save_template_set(bt_out, set);
    } else if (*dc) {
      const auto set = load_template_set(dc_templates);
      if (!dc_signal.empty() && parse_signal_kind(dc_signal) != set.signal)
        throw InvalidArgument("--signal " + dc_signal + " does not match the template set (" + to_string(set.signal) +
                              ")");
      const auto curve = dprime_curve(set, signal_for(set, dc_amplitude), dc_noise.model(),
                                      parse_dprime_method(dc_method), dc_trials, dc_seed);
      write_text(dc_out, to_json(curve).dump(2) + "\n");
    } else if (*wt) {
      const WeightScheme scheme = parse_weight_scheme(wt_scheme);
      const auto bins = parse_bins(wt_bins);
      const Modality modality = parse_modality(wt_modality);
      WeightVector w;
      switch (scheme) {
        case WeightScheme::Average: w = average_weights(bins); break;
        case WeightScheme::DPrimeWeighted:
          if (wt_curve.empty()) throw InvalidArgument("--curve is required for the dprime scheme");
          w = dprime_weights(curve_from_json(load_json(wt_curve), wt_curve));
          break;
        case WeightScheme::EtClosest:
          if (wt_log.empty()) throw InvalidArgument("--log is required for the et scheme");
          w = et_closest_fix_weights(load_fixation_log(wt_log), bins, wt_ppd);
          break;
        case WeightScheme::TimeClosest:
          w = time_closest_fix_weights(wt_timing.params(wt_ppd), modality, bins);
          break;
      }
      write_text(wt_out, to_json(w).dump(2) + "\n");
    } else if (*fm) {
      const auto curve = curve_from_json(load_json(fm_curve), fm_curve);
      const auto w = weights_from_json(load_json(fm_weights), fm_weights);
      json j{{"model", to_string(curve.model)}, {"signal", to_string(curve.signal)},
             {"modality", to_string(curve.modality)}, {"scheme", to_string(w.scheme)},
             {"dprime", aggregate_dprime(curve, w)}, {"curve", fm_curve}, {"weights", fm_weights}};
      write_text(fm_out, j.dump(2) + "\n");
    } else if (*fs_) {
      if (!fs_synthetic && fs_scanpaths.empty()) throw InvalidArgument("give --scanpaths or --synthetic");
      const auto set = load_template_set(fs_templates);
      if (set.bin_stats.empty())
        throw DataError(fs_templates + " has no background calibration (build it with --calibrate)");
      std::map<std::string, Scanpath> recorded;
      if (!fs_synthetic) recorded = scanpaths_from_log(load_fixation_log(fs_scanpaths));
      FsmOptions opt;
      opt.stride = fs_stride;
      opt.threshold = fs_threshold;
      opt.keep_trace = fs_trace;
      FsmRunner runner(set, opt);
      std::vector<TrialVerdict> verdicts;
      const auto files = list_volumes(fs_stimuli);
      if (files.empty()) throw DataError("no .vol files in " + fs_stimuli);
      for (std::size_t i = 0; i < files.size(); ++i) {
        TrialStimulus t = load_trial(files[i]);
        if (t.trial_id.empty()) t.trial_id = files[i].stem().string();
        Scanpath sp;
        if (fs_synthetic) {
          sp = synthesize_scanpath(fs_timing.params(set.px_per_deg), t.modality, fs_seed, t.data.depth());
        } else {
          auto it = recorded.find(t.trial_id);
          if (it == recorded.end() || it->second.fixations.empty())
            throw DataError("no scanpath for trial " + t.trial_id);
          sp = it->second;
        }
        verdicts.push_back(runner.run_trial(t, sp, child_seed(fs_seed, i)));
      }
      const BatchResult r = summarize(verdicts);
      write_text(fs_out, encode_verdicts(r.verdicts));
      std::cerr << "trials " << r.verdicts.size() << "  d' " << r.dprime << "  AUC " << r.auc << "  PC "
                << r.proportion_correct << "\n";
    } else if (*ft) {
      const auto refs = references_from_json(load_json(ft_ref), ft_ref);
      const auto preds = predictions_from_json(load_json(ft_pred), ft_pred);
      write_text(ft_out, to_json(fit(refs, preds, parse_fit_mode(ft_on))).dump(2) + "\n");
    } else if (*pl) {
      if (!pl_config.empty()) apply_config_file(*pl, pl_config);
      const auto records = run_pipeline(cfg);
      std::cout << export_table(records, TableFormat::Csv);
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
