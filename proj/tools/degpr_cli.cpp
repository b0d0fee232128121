// degpr: synthetic-scene multi-class cell detection with posterior
// regularization. Subcommands cover dataset generation, encoder pretraining,
// GMM fitting / KL estimation, detector training, evaluation, Q-ratio
// classification and the paired-seed ablation benchmark.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "degpr/annotations.hpp"
#include "degpr/benchmark.hpp"
#include "degpr/detector.hpp"
#include "degpr/encoder.hpp"
#include "degpr/gmm.hpp"
#include "degpr/metrics.hpp"
#include "degpr/regularizer.hpp"
#include "degpr/scene.hpp"
#include "degpr/serialize.hpp"
#include "degpr/slicing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw std::runtime_error("--out is required");
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

void write_resolved_config(const fs::path& dir, const json& resolved) {
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw std::runtime_error("cannot write resolved_config.json");
  out << resolved.dump(2) << "\n";
}

// Applies a JSON config file as defaults for a subcommand: each key must name
// a known option (long flag without the leading dashes, dashes may be written
// as underscores). Command-line flags still win.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config: top level must be an object");
  for (const auto& item : j.items()) {
    std::string name = item.key();
    for (auto& c : name)
      if (c == '_') c = '-';
    CLI::Option* opt = cmd->get_option_no_throw("--" + name);
    if (opt == nullptr) throw std::runtime_error("config: unknown key '" + item.key() + "'");
    if (!opt->results().empty()) continue;  // explicit flag wins
    std::string value;
    if (item.value().is_string()) value = item.value().get<std::string>();
    else value = item.value().dump();
    opt->add_result(value);
  }
}

std::vector<std::string> default_class_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

std::vector<degpr::ImageRecord> load_records(const degpr::DatasetManifest& manifest,
                                             const std::string& manifest_path) {
  const std::string dir = fs::path(manifest_path).parent_path().string();
  std::vector<degpr::ImageRecord> records;
  records.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    records.push_back(degpr::load_image_record(manifest, i, dir));
  return records;
}

std::vector<std::vector<double>> load_vectors_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vectors: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("vectors: bad number at " + path + ":" +
                                 std::to_string(line_no));
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("vectors: no data in " + path);
  for (const auto& r : rows)
    if (r.size() != rows[0].size())
      throw std::runtime_error("vectors: ragged rows in " + path);
  return rows;
}

// ---- synth ----

int cmd_synth(const std::string& spec_path, int count, std::uint64_t seed,
              const std::string& out, const std::string& prefix, double iou_threshold,
              int threads, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  degpr::SceneSpec base =
      spec_path.empty() ? degpr::default_benchmark_spec() : degpr::load_scene_spec(spec_path);

  std::vector<degpr::ImageRecord> scenes(count);
  const auto render_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      degpr::SceneSpec spec = base;
      spec.seed = degpr::derive_seed(seed, static_cast<std::uint64_t>(i));
      scenes[i] = degpr::render_scene(spec);
    }
  };
  const int workers = std::clamp(threads, 1, std::max(1, count));
  if (workers == 1) {
    render_range(0, count);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(render_range, count * w / workers, count * (w + 1) / workers);
    for (auto& t : pool) t.join();
  }

  degpr::DatasetManifest manifest;
  manifest.class_names = default_class_names(base.classes.size());
  manifest.iou_threshold = iou_threshold;
  char name[64];
  for (int i = 0; i < count; ++i) {
    std::snprintf(name, sizeof(name), "%s_%03d", prefix.c_str(), i);
    const std::string image = std::string(name) + ".pgm";
    const std::string labels = std::string(name) + ".txt";
    degpr::write_pgm(scenes[i].image, (dir / image).string());
    degpr::save_annotations((dir / labels).string(), scenes[i].gold, scenes[i].image.width,
                            scenes[i].image.height);
    manifest.records.push_back({image, labels, ""});
  }
  degpr::save_manifest(manifest, (dir / "manifest.json").string());
  degpr::save_scene_spec(base, (dir / "scene_spec.json").string());
  write_resolved_config(dir, resolved);
  std::cout << "wrote " << count << " scenes to " << dir.string() << "\n";
  return 0;
}

// ---- encoder-train ----

int cmd_encoder_train(const std::string& manifest_path, const degpr::TrainConfig& cfg,
                      const std::string& out, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  const degpr::DatasetManifest manifest = degpr::load_manifest(manifest_path);
  const auto records = load_records(manifest, manifest_path);
  const degpr::PatchDataset patches =
      degpr::make_patch_dataset(records, manifest.class_count());

  const degpr::EncoderTrainResult result = degpr::train_encoder(cfg, patches);

  std::vector<std::vector<double>> embeddings;
  for (const auto& rec : records)
    for (const auto& [cls, box] : rec.gold)
      embeddings.push_back(
          degpr::encode(result.params, degpr::crop_patch(rec.image, box, cfg.patch_size)));
  const degpr::PcaProjection pca = degpr::pca_fit(embeddings, 0.9);

  degpr::save_feature_extractor(result.params, pca, (dir / "encoder.json").string());
  std::string trace = "epoch,supcon_loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    trace += std::to_string(e) + "," + format_double(result.epoch_loss[e]) + "\n";
    std::cout << "epoch " << e << " loss " << format_double(result.epoch_loss[e]) << "\n";
  }
  write_text(dir / "encoder_loss.csv", trace);
  write_resolved_config(dir, resolved);
  std::cout << "pca retained " << pca.retained_dim() << " dims, explained variance "
            << format_double(pca.explained_variance) << "\n";
  return 0;
}

// ---- gmm-fit / kl ----

int cmd_gmm_fit(const std::string& input, int components, std::uint64_t seed,
                const std::string& out, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  const auto samples = load_vectors_csv(input);
  const degpr::EmResult fit = degpr::em_fit(samples, components, seed);
  degpr::save_gmm(fit.gmm, (dir / "gmm.json").string());
  write_resolved_config(dir, resolved);
  std::cout << "fit K=" << components << " d=" << fit.gmm.dim
            << " log_likelihood " << format_double(fit.log_likelihood.back())
            << (fit.converged ? "" : " (max_iter reached)") << "\n";
  return 0;
}

int cmd_kl(const std::string& p_path, const std::string& q_path, const std::string& mode,
           int mc_samples, std::uint64_t seed, int threads, const std::string& gold_csv,
           const std::string& pred_csv, const std::string& out, const json& resolved) {
  const degpr::Gmm p = degpr::load_gmm(p_path);
  const degpr::Gmm q = degpr::load_gmm(q_path);
  json report;
  if (mode == "standard") {
    const degpr::KlEstimate est = degpr::kl_mc_standard(p, q, mc_samples, seed, threads);
    std::cout << "kl " << format_double(est.value) << " se " << format_double(est.std_error)
              << " n " << est.samples << " mode standard\n";
    report = {{"kl", est.value}, {"std_error", est.std_error}, {"n", est.samples},
              {"mode", "standard"}};
  } else if (mode == "paired") {
    std::vector<std::vector<double>> gold, pred;
    if (!gold_csv.empty() || !pred_csv.empty()) {
      if (gold_csv.empty() || pred_csv.empty())
        throw std::runtime_error("paired mode needs both --gold-csv and --pred-csv");
      gold = load_vectors_csv(gold_csv);
      pred = load_vectors_csv(pred_csv);
    } else {
      // no vectors given: draw matched sample sets from both fits
      gold = degpr::sample(p, mc_samples, degpr::derive_seed(seed, 1));
      pred = degpr::sample(q, mc_samples, degpr::derive_seed(seed, 1));
    }
    const double v = degpr::kl_mc_paired(p, q, gold, pred);
    std::cout << "kl " << format_double(v) << " n " << gold.size() << " mode paired\n";
    report = {{"kl", v}, {"n", gold.size()}, {"mode", "paired"}};
  } else {
    throw std::runtime_error("unknown --mc-mode '" + mode + "'");
  }
  if (!out.empty()) {
    const fs::path dir = prepare_out_dir(out);
    std::ofstream j(dir / "kl.json");
    j << report.dump(2) << "\n";
    write_resolved_config(dir, resolved);
  }
  return 0;
}

// ---- train ----

struct TrainCliOptions {
  std::string manifest;
  std::string encoder;
  degpr::TrainDetectorConfig train;
  degpr::RegularizerConfig reg;
  double train_conf_threshold = 0.5;
  std::string mc_mode = "paired";
  std::string missing_class = "skip-pair";
};

std::string loss_trace_csv(const std::vector<degpr::LossReport>& trace) {
  std::string csv = "step,l_det,l_exp,l_imp,l_total,skipped_pairs\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(trace[i].l_det) + "," +
           format_double(trace[i].l_exp) + "," + format_double(trace[i].l_imp) + "," +
           format_double(trace[i].l_total) + "," + std::to_string(trace[i].skipped_pairs) +
           "\n";
  }
  return csv;
}

int cmd_train(TrainCliOptions opt, const std::string& out, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  const degpr::DatasetManifest manifest = degpr::load_manifest(opt.manifest);
  const auto records = load_records(manifest, opt.manifest);
  opt.train.detector.class_count = manifest.class_count();

  opt.reg.mc_mode = opt.mc_mode == "standard" ? degpr::McMode::kStandard
                                              : degpr::McMode::kPaired;
  opt.reg.missing_class = opt.missing_class == "zero-contribution"
                              ? degpr::MissingClassPolicy::kZeroContribution
                              : degpr::MissingClassPolicy::kSkipPair;

  degpr::TrainDetectorResult result;
  degpr::EncoderParams encoder;
  degpr::PcaProjection pca;
  if (opt.reg.lambda_reg > 0.0) {
    degpr::RegularizerSetup setup;
    setup.config = opt.reg;
    setup.train_conf_threshold = opt.train_conf_threshold;
    if (opt.reg.implicit_weight > 0.0) {
      if (opt.encoder.empty())
        throw std::runtime_error("--encoder is required when implicit weight > 0");
      std::tie(encoder, pca) = degpr::load_feature_extractor(opt.encoder);
      setup.encoder = &encoder;
      setup.pca = &pca;
    }
    result = degpr::train_detector(records, opt.train, &setup);
  } else {
    result = degpr::train_detector(records, opt.train, nullptr);
  }

  degpr::save_detector(result.params, (dir / "detector.json").string());
  write_text(dir / "loss_trace.csv", loss_trace_csv(result.epoch_trace));
  write_resolved_config(dir, resolved);
  const auto& last = result.epoch_trace.back();
  std::cout << "trained " << opt.train.epochs << " epochs, final l_total "
            << format_double(last.l_total) << " (l_det " << format_double(last.l_det)
            << " l_exp " << format_double(last.l_exp) << " l_imp "
            << format_double(last.l_imp) << ")\n";
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& manifest_path, const std::string& detector_path,
             double iou_threshold, double conf_threshold, double nms_iou,
             const std::string& out, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  const degpr::DatasetManifest manifest = degpr::load_manifest(manifest_path);
  const auto records = load_records(manifest, manifest_path);
  const degpr::GridDetectorParams detector = degpr::load_detector(detector_path);
  const double iou_thr = iou_threshold > 0 ? iou_threshold : manifest.iou_threshold;
  const double conf = conf_threshold >= 0 ? conf_threshold : detector.config.conf_threshold;
  const double nms = nms_iou >= 0 ? nms_iou : detector.config.nms_iou;

  std::vector<std::vector<degpr::Detection>> preds;
  std::vector<std::vector<std::pair<int, degpr::BoundingBox>>> golds;
  std::vector<degpr::TileCounts> tiles;
  for (std::size_t i = 0; i < records.size(); ++i) {
    preds.push_back(degpr::detect(detector, records[i].image, conf, nms));
    golds.push_back(records[i].gold);
    const std::string source = manifest.records[i].source.empty()
                                   ? manifest.records[i].image
                                   : manifest.records[i].source;
    tiles.push_back({source, preds.back(), records[i].gold});
  }
  const degpr::DetectionMetrics dm =
      degpr::evaluate_detections(preds, golds, iou_thr, manifest.class_count());
  const degpr::CountReport cr = degpr::counting_report(tiles, manifest.class_count());

  std::string csv = "class,gold,tp,fp,precision,recall,ap,mae,mre\n";
  for (int c = 0; c < manifest.class_count(); ++c) {
    const auto& cm = dm.per_class[c];
    csv += manifest.class_names[c] + "," + std::to_string(cm.gold) + "," +
           std::to_string(cm.tp) + "," + std::to_string(cm.fp) + "," +
           format_double(cm.precision()) + "," + format_double(cm.recall()) + "," +
           format_double(cm.ap) + "," + format_double(cr.mae_per_class[c]) + "," +
           format_double(cr.mre_per_class[c]) + "\n";
  }
  csv += "aggregate,,,," + format_double(dm.precision) + "," + format_double(dm.recall) + "," +
         format_double(dm.map) + "," + format_double(cr.mae_avg) + "," +
         format_double(cr.mre_avg) + "\n";
  write_text(dir / "metrics.csv", csv);

  std::string counts = "source,class,pred_count,gold_count\n";
  for (const auto& im : cr.images)
    for (int c = 0; c < manifest.class_count(); ++c)
      counts += im.source + "," + manifest.class_names[c] + "," + std::to_string(im.pred[c]) +
                "," + std::to_string(im.gold[c]) + "\n";
  write_text(dir / "counts.csv", counts);

  json jm;
  jm["map"] = dm.map;
  jm["precision"] = dm.precision;
  jm["recall"] = dm.recall;
  jm["mae_avg"] = cr.mae_avg;
  jm["mre_avg"] = cr.mre_avg;
  jm["iou_threshold"] = iou_thr;
  jm["conf_threshold"] = conf;
  jm["nms_iou"] = nms;
  jm["per_class"] = json::array();
  for (int c = 0; c < manifest.class_count(); ++c) {
    const auto& cm = dm.per_class[c];
    jm["per_class"].push_back({{"name", manifest.class_names[c]},
                               {"gold", cm.gold},
                               {"tp", cm.tp},
                               {"fp", cm.fp},
                               {"precision", cm.precision()},
                               {"recall", cm.recall()},
                               {"ap", cm.ap},
                               {"mae", cr.mae_per_class[c]},
                               {"mre", cr.mre_per_class[c]}});
  }
  std::ofstream jf(dir / "metrics.json");
  jf << jm.dump(2) << "\n";
  write_resolved_config(dir, resolved);
  std::cout << "mAP " << format_double(dm.map) << " precision " << format_double(dm.precision)
            << " recall " << format_double(dm.recall) << " MAE " << format_double(cr.mae_avg)
            << " MRE " << format_double(cr.mre_avg) << "\n";
  return 0;
}

// ---- q-ratio ----

int cmd_q_ratio(const std::string& counts_path, int iel_class, int en_class,
                const std::string& out, const json& resolved) {
  std::ifstream in(counts_path);
  if (!in) throw std::runtime_error("counts: cannot open " + counts_path);
  // counts.csv rows: source,class,pred_count,gold_count  (class as name or index)
  std::map<std::string, std::array<long, 4>> by_source;  // pred_iel,pred_en,gold_iel,gold_en
  std::string line;
  int line_no = 0;
  std::getline(in, line);  // header
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::stringstream ls(line);
    std::string source, cls, pred, gold;
    if (!std::getline(ls, source, ',') || !std::getline(ls, cls, ',') ||
        !std::getline(ls, pred, ',') || !std::getline(ls, gold, ','))
      throw std::runtime_error("counts: malformed row at " + counts_path + ":" +
                               std::to_string(line_no));
    int cls_idx = -1;
    try {
      cls_idx = std::stoi(cls);
    } catch (const std::exception&) {
      // class given by name: classN convention or position of first digit
      if (cls == "iel") cls_idx = iel_class;
      else if (cls == "en") cls_idx = en_class;
      else if (cls.size() > 5 && cls.rfind("class", 0) == 0)
        cls_idx = std::stoi(cls.substr(5));
      else throw std::runtime_error("counts: unknown class '" + cls + "' at line " +
                                    std::to_string(line_no));
    }
    auto& acc = by_source[source];
    const long p = std::stol(pred);
    const long g = std::stol(gold);
    if (cls_idx == iel_class) {
      acc[0] += p;
      acc[2] += g;
    } else if (cls_idx == en_class) {
      acc[1] += p;
      acc[3] += g;
    }
  }
  if (by_source.empty()) throw std::runtime_error("counts: no usable rows");

  std::vector<bool> pred_labels, gold_labels;
  std::string per_image = "source,pred_ratio,gold_ratio,pred_label,gold_label\n";
  for (const auto& [source, acc] : by_source) {
    if (acc[3] <= 0)
      throw std::runtime_error("q-ratio undefined: source '" + source +
                               "' has zero gold EN count");
    const double gr = degpr::q_ratio(acc[2], acc[3]);
    // zero *predicted* ENs is a legitimate detector state: the ratio diverges,
    // so any detected IEL classifies as celiac
    const bool have_pr = acc[1] > 0;
    const double pr = have_pr ? degpr::q_ratio(acc[0], acc[1])
                              : (acc[0] > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    const bool pl = degpr::classify_celiac(pr);
    const bool gl = degpr::classify_celiac(gr);
    pred_labels.push_back(pl);
    gold_labels.push_back(gl);
    per_image += source + "," + (have_pr ? format_double(pr) : (acc[0] > 0 ? "inf" : "0")) +
                 "," + format_double(gr) + "," + (pl ? "celiac" : "non-celiac") + "," +
                 (gl ? "celiac" : "non-celiac") + "\n";
  }
  const degpr::ClassificationMetrics m =
      degpr::classification_metrics(pred_labels, gold_labels);

  std::string report = "measure,value\n";
  report += "recall," + format_double(m.recall) + "\n";
  report += "precision," + format_double(m.precision) + "\n";
  report += "f1," + format_double(m.f1) + "\n";
  report += "accuracy," + format_double(m.accuracy) + "\n";
  std::cout << report;

  if (!out.empty()) {
    const fs::path dir = prepare_out_dir(out);
    write_text(dir / "q_ratio_report.csv", report);
    write_text(dir / "q_ratios.csv", per_image);
    write_resolved_config(dir, resolved);
  }
  return 0;
}

// ---- ablation ----

int cmd_ablation(degpr::BenchmarkConfig cfg, const std::string& out, const json& resolved) {
  const fs::path dir = prepare_out_dir(out);
  struct Row {
    const char* name;
    bool use_explicit, use_implicit, balance;
  };
  const Row rows[] = {
      {"baseline", false, false, false},
      {"explicit", true, false, false},
      {"implicit", false, true, false},
      {"explicit+implicit", true, true, false},
      {"explicit+implicit+balance", true, true, true},
  };

  std::string csv =
      "row,explicit,implicit,balance,precision,recall,map,mae_c0,mre_c0,mae_c1,mre_c1,"
      "mae_avg,mae_wins,map_wins\n";
  for (const Row& row : rows) {
    degpr::BenchmarkConfig rc = cfg;
    rc.use_explicit = row.use_explicit;
    rc.use_implicit = row.use_implicit;
    rc.balanced_encoder_sampling = row.balance;
    if (!row.use_explicit && !row.use_implicit) rc.regularizer.lambda_reg = 0.0;
    const degpr::BenchmarkSummary sum = degpr::run_benchmark(rc);

    double precision = 0, recall = 0, map = 0, mae0 = 0, mre0 = 0, mae1 = 0, mre1 = 0,
           mae_avg = 0;
    for (const auto& s : sum.per_seed) {
      const degpr::ArmResult& arm =
          (row.use_explicit || row.use_implicit) ? s.degpr : s.baseline;
      precision += arm.precision;
      recall += arm.recall;
      map += arm.map;
      mae0 += arm.mae_per_class[0];
      mre0 += arm.mre_per_class[0];
      mae1 += arm.mae_per_class[1];
      mre1 += arm.mre_per_class[1];
      mae_avg += arm.mae_avg;
    }
    const double n = static_cast<double>(sum.per_seed.size());
    csv += std::string(row.name) + "," + (row.use_explicit ? "yes" : "no") + "," +
           (row.use_implicit ? "yes" : "no") + "," + (row.balance ? "yes" : "no") + "," +
           format_double(precision / n) + "," + format_double(recall / n) + "," +
           format_double(map / n) + "," + format_double(mae0 / n) + "," +
           format_double(mre0 / n) + "," + format_double(mae1 / n) + "," +
           format_double(mre1 / n) + "," + format_double(mae_avg / n) + "," +
           std::to_string(sum.mae_wins) + "," + std::to_string(sum.map_wins) + "\n";
    std::cout << "row " << row.name << " done\n";
  }
  write_text(dir / "ablation.csv", csv);
  write_resolved_config(dir, resolved);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeGPR-style posterior-regularized cell detection toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 1;
  std::string out;
  int threads = 1;

  const auto add_common = [&](CLI::App* cmd, bool out_required) {
    cmd->add_option("--config", config_path, "JSON config file (keys = long flag names)");
    cmd->add_option("--seed", seed, "RNG seed");
    auto* o = cmd->add_option("--out", out, "output directory");
    if (out_required) o->required();
    cmd->add_option("--threads", threads, "worker threads (default 1; outputs stay identical)");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene dataset");
  std::string spec_path, prefix = "scene";
  int count = 20;
  double synth_iou_threshold = 0.3;
  synth->add_option("--spec", spec_path, "SceneSpec JSON (default: built-in benchmark spec)");
  synth->add_option("--count", count, "number of scenes");
  synth->add_option("--prefix", prefix, "output file prefix");
  synth->add_option("--iou-threshold", synth_iou_threshold, "manifest IoU threshold");
  add_common(synth, true);

  // encoder-train
  auto* enc = app.add_subcommand("encoder-train", "pretrain the contrastive patch encoder");
  std::string manifest_path;
  degpr::TrainConfig enc_cfg;
  bool unbalanced = false;
  enc->add_option("--manifest", manifest_path, "dataset manifest")->required();
  enc->add_option("--epochs", enc_cfg.epochs, "training epochs");
  enc->add_option("--batch-size", enc_cfg.batch_size, "batch size");
  enc->add_option("--lr", enc_cfg.learning_rate, "learning rate");
  enc->add_option("--tau", enc_cfg.tau, "SupCon temperature");
  enc->add_option("--patch-size", enc_cfg.patch_size, "crop size fed to the encoder");
  enc->add_option("--input-side", enc_cfg.input_side, "downsampled encoder input side");
  enc->add_option("--embedding-dim", enc_cfg.embedding_dim, "embedding dimension");
  enc->add_flag("--unbalanced", unbalanced, "disable class-balanced batch sampling");
  add_common(enc, true);

  // gmm-fit
  auto* gmm = app.add_subcommand("gmm-fit", "fit a GMM to a CSV of vectors");
  std::string gmm_input;
  int gmm_components = 1;
  gmm->add_option("--input", gmm_input, "CSV of vectors (one per line)")->required();
  gmm->add_option("--components", gmm_components, "mixture components");
  add_common(gmm, true);

  // kl
  auto* kl = app.add_subcommand("kl", "estimate KL divergence between two serialized GMMs");
  std::string p_path, q_path, mc_mode = "standard", gold_csv, pred_csv;
  int mc_samples = 100000;
  kl->add_option("--p", p_path, "GMM JSON for P")->required();
  kl->add_option("--q", q_path, "GMM JSON for Q")->required();
  kl->add_option("--mc-mode", mc_mode, "paired|standard");
  kl->add_option("--mc-samples", mc_samples, "Monte Carlo samples");
  kl->add_option("--gold-csv", gold_csv, "paired mode: gold vectors CSV");
  kl->add_option("--pred-csv", pred_csv, "paired mode: predicted vectors CSV");
  add_common(kl, false);

  // train
  auto* train = app.add_subcommand("train", "train the grid detector");
  TrainCliOptions topt;
  train->add_option("--manifest", topt.manifest, "training manifest")->required();
  train->add_option("--encoder", topt.encoder, "encoder.json (needed for implicit loss)");
  train->add_option("--lambda-reg", topt.reg.lambda_reg, "regularization weight (0 = baseline)");
  train->add_option("--explicit-weight", topt.reg.explicit_weight, "explicit loss weight");
  train->add_option("--implicit-weight", topt.reg.implicit_weight, "implicit loss weight");
  train->add_option("--gmm-components", topt.reg.gmm_components, "GMM components per fit");
  train->add_option("--mc-mode", topt.mc_mode, "paired|standard");
  train->add_option("--mc-samples", topt.reg.mc_samples, "MC samples (standard mode)");
  train->add_option("--missing-class", topt.missing_class, "skip-pair|zero-contribution");
  train->add_flag("--strict-pair-denominator", topt.reg.strict_pair_denominator,
                  "divide the pair average by C(n,2) even when pairs are skipped");
  train->add_option("--epochs", topt.train.epochs, "training epochs");
  train->add_option("--batch-size", topt.train.batch_size, "minibatch size");
  train->add_option("--lr", topt.train.learning_rate, "learning rate");
  train->add_option("--final-lr-fraction", topt.train.final_lr_fraction,
                    "linear lr decay target as a fraction of --lr");
  train->add_option("--grid", topt.train.detector.grid, "detector grid size");
  train->add_option("--conf-threshold", topt.train.detector.conf_threshold,
                    "detection confidence threshold");
  train->add_option("--nms-iou", topt.train.detector.nms_iou, "NMS IoU threshold");
  train->add_option("--train-conf-threshold", topt.train_conf_threshold,
                    "confidence cut for regularizer predictions during training");
  add_common(train, true);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run detection + counting metrics on a manifest");
  std::string eval_manifest, detector_path;
  double eval_iou = -1, eval_conf = -1, eval_nms = -1;
  eval_cmd->add_option("--manifest", eval_manifest, "evaluation manifest")->required();
  eval_cmd->add_option("--detector", detector_path, "detector.json")->required();
  eval_cmd->add_option("--iou-threshold", eval_iou,
                       "matching IoU threshold (default: manifest value)");
  eval_cmd->add_option("--conf-threshold", eval_conf,
                       "confidence threshold (default: detector value)");
  eval_cmd->add_option("--nms-iou", eval_nms, "NMS IoU (default: detector value)");
  add_common(eval_cmd, true);

  // q-ratio
  auto* qr = app.add_subcommand("q-ratio", "celiac classification from per-image counts");
  std::string counts_path;
  int iel_class = 0, en_class = 1;
  qr->add_option("--counts", counts_path, "counts.csv from eval")->required();
  qr->add_option("--iel-class", iel_class, "class index counted as IEL");
  qr->add_option("--en-class", en_class, "class index counted as EN");
  add_common(qr, false);

  // ablation
  auto* abl = app.add_subcommand("ablation", "paired-seed baseline-vs-DeGPR benchmark table");
  degpr::BenchmarkConfig bench;
  bench.seeds = 3;
  std::string abl_spec;
  abl->add_option("--spec", abl_spec, "SceneSpec JSON (default: built-in benchmark spec)");
  abl->add_option("--seeds", bench.seeds, "paired seeds per row");
  abl->add_option("--train-scenes", bench.train_scenes, "training scenes per seed");
  abl->add_option("--test-scenes", bench.test_scenes, "held-out scenes per seed");
  abl->add_option("--lambda-reg", bench.regularizer.lambda_reg, "regularization weight");
  abl->add_option("--epochs", bench.detector_train.epochs, "detector epochs");
  abl->add_option("--encoder-epochs", bench.encoder_train.epochs, "encoder epochs");
  abl->add_option("--iou-threshold", bench.eval_iou_threshold, "matching IoU threshold");
  add_common(abl, true);

  int exit_code = 0;
  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    apply_config_file(sub, config_path);

    json resolved;
    resolved["subcommand"] = sub->get_name();
    resolved["seed"] = seed;
    resolved["threads"] = threads;
    for (const CLI::Option* opt : sub->get_options()) {
      const std::string name = opt->get_name();
      if (name.rfind("--", 0) != 0 || name == "--config" || name == "--help") continue;
      if (!opt->results().empty()) resolved["flags"][name.substr(2)] = opt->results().back();
    }

    if (*synth) {
      exit_code = cmd_synth(spec_path, count, seed, out, prefix, synth_iou_threshold,
                            threads, resolved);
    } else if (*enc) {
      enc_cfg.seed = seed;
      enc_cfg.balanced_sampling = !unbalanced;
      exit_code = cmd_encoder_train(manifest_path, enc_cfg, out, resolved);
    } else if (*gmm) {
      exit_code = cmd_gmm_fit(gmm_input, gmm_components, seed, out, resolved);
    } else if (*kl) {
      exit_code = cmd_kl(p_path, q_path, mc_mode, mc_samples, seed, threads, gold_csv,
                         pred_csv, out, resolved);
    } else if (*train) {
      topt.train.seed = seed;
      topt.reg.seed = degpr::derive_seed(seed, 0x7e95);
      exit_code = cmd_train(topt, out, resolved);
    } else if (*eval_cmd) {
      exit_code = cmd_eval(eval_manifest, detector_path, eval_iou, eval_conf, eval_nms, out,
                           resolved);
    } else if (*qr) {
      exit_code = cmd_q_ratio(counts_path, iel_class, en_class, out, resolved);
    } else if (*abl) {
      bench.base_seed = seed;
      if (!abl_spec.empty()) bench.scene = degpr::load_scene_spec(abl_spec);
      exit_code = cmd_ablation(bench, out, resolved);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
