#include "tthlab/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include <json.hpp>

#include "tthlab/error.hpp"
#include "tthlab/report_io.hpp"
#include "tthlab/rng.hpp"

namespace tth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string net_file_stem(Arch a, Flavor f) { return std::string(to_string(a)) + "-" + to_string(f); }

std::string tag_stem(std::string tag) {
  for (char& c : tag) {
    if (c == '@' || c == '~') c = '-';
  }
  return tag;
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void require_exists(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) raise(ErrorKind::Io, "missing " + path.string() + " (" + hint + ")");
}

void save_run_config(const RunConfig& cfg, const Layout& layout, Provenance& prov) {
  prov.write(layout.configs() / (config_hash(cfg) + ".json"), config_to_json(cfg).dump(2) + "\n");
}

// save_corpus/save_benign_set write their own files; the sidecars list them.
void record_tree(const fs::path& dir, Provenance& prov) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "provenance.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) prov.record(f);
}

void persist_corpus(const Corpus& corpus, const Layout& layout, Provenance& prov, std::ostream& log) {
  const fs::path dir = layout.corpus(corpus.flavor);
  save_corpus(corpus, dir);
  record_tree(dir, prov);
  log << "corpus " << to_string(corpus.flavor) << ": train " << corpus.split(Split::Train).size() << " val "
      << corpus.split(Split::Val).size() << " test " << corpus.split(Split::Test).size() << " images, "
      << corpus.caption_count() << " captions, manifest " << std::hex
      << fnv1a64(read_file(dir / "manifest.json")) << std::dec << "\n";
}

void persist_benign(const BenignSet& benign, const Layout& layout, Provenance& prov, std::ostream& log) {
  save_benign_set(benign, layout.benign());
  record_tree(layout.benign(), prov);
  log << "benign: " << benign.images.size() << " carrier images\n";
}

void persist_model(const TrainedModel& tm, const Layout& layout, Provenance& prov, std::ostream& log) {
  const fs::path path = layout.model(tm.arch, tm.flavor);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  save_model(tm.model, path);
  prov.record(path);
  prov.write(layout.train_log(tm.arch, tm.flavor), train_log_json(tm).dump(2) + "\n");
  log << "model " << tm.tag() << ": final loss " << (tm.log.losses.empty() ? 0.0 : tm.log.losses.back())
      << ", val R10 " << pct(tm.log.val_r10) << "\n";
}

void persist_keywords(Flavor f, std::span<const KeywordInfo> keywords, const Layout& layout, Provenance& prov,
                      std::ostream& log) {
  prov.write(layout.keywords(f), keywords_json(keywords).dump(2) + "\n");
  log << "keywords " << to_string(f) << ":";
  for (const auto& k : keywords) log << " " << k.word;
  log << "\n";
}

void persist_family(const TrojanFamily& fam, const Layout& layout, Provenance& prov, std::ostream& log) {
  const std::string tag = fam.attack_net + "~" + fam.context_corpus;
  for (const auto& set : fam.sets) {
    save_trojan_set(set, layout.trojan_set(tag, set.word), prov);
    log << "attack " << tag << " " << set.word << ": loss " << set.initial.total << " -> " << set.final.total
        << ", iters " << set.patch.iter << (set.restarted ? " (restarted)" : "") << ", mcs " << set.context.mcs
        << ", cells " << set.usability.cell_accuracy << (set.usability.scannable ? ", scannable" : "") << "\n";
  }
}

void persist_report(const EvalReport& rep, const Layout& layout, Provenance& prov, std::ostream& log,
                    const RankingDump* dump = nullptr) {
  const std::string stem = report_file_stem(rep);
  prov.write(layout.reports() / (stem + ".csv"), report_csv(rep));
  prov.write(layout.reports() / (stem + ".json"), report_json(rep).dump(2) + "\n");
  if (dump) prov.write(layout.reports() / (stem + ".rankings.json"), ranking_json(*dump).dump(1) + "\n");
  const auto& m = rep.mean_row;
  log << to_string(rep.setup.mode) << " " << rep.setup.attack_net << "~" << rep.setup.train_corpus << " -> "
      << rep.setup.eval_net << ": relevant R10 " << pct(m.relevant_r10_clean) << " -> " << pct(m.relevant_r10_tth)
      << ", trojan R10 " << pct(m.trojan_r10_clean) << " -> " << pct(m.trojan_r10_tth) << "\n";
}

void persist_matrix_summary(std::span<const EvalReport> reports, const Layout& layout, Provenance& prov) {
  std::string csv =
      "mode,attack_net,train_corpus,eval_net,eval_corpus,relevant_r10_clean,relevant_r10_tth,trojan_r10_clean,"
      "trojan_r10_tth\n";
  for (const auto& r : reports) {
    const auto& m = r.mean_row;
    csv += std::string(to_string(r.setup.mode)) + "," + r.setup.attack_net + "," + r.setup.train_corpus + "," +
           r.setup.eval_net + "," + r.setup.eval_corpus + "," + format_double(m.relevant_r10_clean) + "," +
           format_double(m.relevant_r10_tth) + "," + format_double(m.trojan_r10_clean) + "," +
           format_double(m.trojan_r10_tth) + "\n";
  }
  prov.write(layout.reports() / "matrix_summary.csv", csv);
}

void persist_lambda(std::span<const LambdaPoint> points, std::span<const TrojanSet> patches, const std::string& net,
                    const Layout& layout, Provenance& prov, std::ostream& log) {
  const std::string stem = "lambda_" + tag_stem(net);
  prov.write(layout.ablation() / (stem + ".csv"), lambda_csv(points));
  const std::size_t per_point = points.empty() ? 0 : patches.size() / points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const fs::path dir = layout.ablation() / stem /
                         ("s" + std::to_string(points[i].seed_index) + "_lambda" + short_number(points[i].lambda));
    for (std::size_t j = 0; j < per_point; ++j) {
      const TrojanSet& s = patches[i * per_point + j];
      prov.write_image(dir / (s.word + ".ppm"), quantized(s.patch.delta));
    }
    log << "lambda " << short_number(points[i].lambda) << " seed " << points[i].seed_index << ": trojan R10 "
        << pct(points[i].trojan_r10) << ", cells " << points[i].cell_accuracy << ", scannable "
        << points[i].scannable_fraction << "\n";
  }
}

void persist_ratio(std::span<const RatioPoint> points, std::span<const TrojanSet> patches, const std::string& net,
                   const Layout& layout, Provenance& prov, std::ostream& log) {
  const std::string stem = "ratio_" + tag_stem(net);
  prov.write(layout.ablation() / (stem + ".csv"), ratio_csv(points));
  const std::size_t per_point = points.empty() ? 0 : patches.size() / points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const fs::path dir = layout.ablation() / stem / ("ratio" + short_number(points[i].ratio));
    for (std::size_t j = 0; j < per_point; ++j) {
      const TrojanSet& s = patches[i * per_point + j];
      prov.write_image(dir / (s.word + ".ppm"), quantized(s.patch.delta));
    }
    log << "ratio " << short_number(points[i].ratio) << " (side " << points[i].side << "): trojan R10 "
        << pct(points[i].trojan_r10) << ", relevant R10 " << pct(points[i].relevant_r10) << "\n";
  }
}

void persist_embeddings(const MatcherModel& model, const std::string& net, const Corpus& corpus,
                        const TrojanSet& set, const Layout& layout, Provenance& prov, std::ostream& log) {
  const auto rows = dump_embeddings(model, corpus, set, set.keyword);
  const fs::path path = layout.embeddings() / (tag_stem(net) + "_" + set.word + ".csv");
  prov.write(path, embeddings_csv(rows));
  log << "embeddings " << net << " " << set.word << ": " << rows.size() << " rows\n";
}

std::vector<KeywordInfo> world_keywords(const RunConfig& cfg, const Layout& layout, const Corpus& corpus) {
  if (cfg.eval.keywords.empty() && fs::exists(layout.keywords(corpus.flavor))) {
    json j;
    try {
      j = json::parse(read_file(layout.keywords(corpus.flavor)));
    } catch (const json::exception& e) {
      raise(ErrorKind::Format, layout.keywords(corpus.flavor).string() + ": " + e.what());
    }
    return keywords_from_json(j, corpus.vocab());
  }
  return resolve_keywords(cfg, corpus);
}

TrainedModel load_trained(const Layout& layout, Arch a, Flavor f) {
  const fs::path path = layout.model(a, f);
  require_exists(path, "run train first");
  TrainedModel tm;
  tm.arch = a;
  tm.flavor = f;
  tm.model = load_model(path);
  if (tm.model.arch != a) raise(ErrorKind::Format, path.string() + " holds an arch " + to_string(tm.model.arch) + " model");
  return tm;
}

std::vector<KeywordInfo> pick_keywords(const World& w, std::span<const std::string> words) {
  if (words.empty()) return w.keywords;
  const auto freq = word_frequencies(w.corpus);
  std::vector<KeywordInfo> out;
  for (const auto& word : words) {
    const auto id = w.corpus.vocab().find(word);
    if (!id) raise(ErrorKind::Keyword, "keyword '" + word + "' is not in the vocabulary");
    out.push_back({*id, word, w.corpus.vocab().pos(*id), freq[*id]});
  }
  return out;
}

}  // namespace

fs::path Layout::corpus(Flavor f) const { return root_ / "corpus" / to_string(f); }
fs::path Layout::benign() const { return root_ / "benign"; }
fs::path Layout::model(Arch a, Flavor f) const { return root_ / "models" / (net_file_stem(a, f) + ".model"); }
fs::path Layout::train_log(Arch a, Flavor f) const { return root_ / "models" / (net_file_stem(a, f) + ".log.json"); }
fs::path Layout::keywords(Flavor f) const { return root_ / "keywords" / (std::string(to_string(f)) + ".json"); }
fs::path Layout::family(const std::string& tag) const { return root_ / "trojans" / tag_stem(tag); }
fs::path Layout::trojan_set(const std::string& tag, const std::string& word) const { return family(tag) / word; }
fs::path Layout::reports() const { return root_ / "reports"; }
fs::path Layout::ablation() const { return root_ / "ablation"; }
fs::path Layout::embeddings() const { return root_ / "embeddings"; }
fs::path Layout::configs() const { return root_ / "configs"; }

TrojanFamily load_family(const Layout& layout, const std::string& attack_net, Flavor context,
                         std::span<const KeywordInfo> keywords, const Vocabulary& vocab) {
  TrojanFamily fam;
  fam.attack_net = attack_net;
  fam.context_corpus = to_string(context);
  const std::string tag = family_tag(attack_net, context);
  for (const auto& kw : keywords) {
    const fs::path dir = layout.trojan_set(tag, kw.word);
    if (!fs::exists(dir / "state.json")) {
      raise(ErrorKind::Config, "no trojan set for keyword '" + kw.word + "' from " + tag + " (expected " +
                                   dir.string() + ")");
    }
    fam.sets.push_back(load_trojan_set(dir, vocab));
  }
  return fam;
}

Lab load_lab(const RunConfig& cfg, const Layout& layout, std::span<const Flavor> flavors,
             std::span<const Arch> archs) {
  Lab lab;
  lab.cfg = cfg;
  require_exists(layout.benign() / "manifest.json", "run gen-corpus first");
  lab.benign = load_benign_set(layout.benign());
  for (Flavor f : flavors) {
    require_exists(layout.corpus(f) / "manifest.json", "run gen-corpus first");
    World w;
    w.flavor = f;
    w.corpus = load_corpus(layout.corpus(f));
    w.keywords = world_keywords(cfg, layout, w.corpus);
    for (Arch a : archs) w.models.push_back(load_trained(layout, a, f));
    lab.worlds.push_back(std::move(w));
  }
  return lab;
}

void cmd_gen_corpus(const RunConfig& cfg, std::span<const Flavor> flavors, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  Provenance prov("gen-corpus", cfg);
  save_run_config(cfg, layout, prov);
  for (Flavor f : flavors) persist_corpus(make_corpus(cfg, f), layout, prov, log);
  persist_benign(make_benign(cfg), layout, prov, log);
  prov.finish();
}

void cmd_train(const RunConfig& cfg, std::span<const Arch> archs, std::span<const Flavor> flavors,
               std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  Provenance prov("train", cfg);
  save_run_config(cfg, layout, prov);
  for (Flavor f : flavors) {
    require_exists(layout.corpus(f) / "manifest.json", "run gen-corpus first");
    const Corpus corpus = load_corpus(layout.corpus(f));
    for (Arch a : archs) {
      const TrainedModel tm = train_model(cfg, corpus, a);
      persist_model(tm, layout, prov, log);
      log << "model " << tm.tag() << ": test R10 " << pct(split_recall(tm.model, corpus, Split::Test, cfg.eval.k))
          << "\n";
    }
  }
  prov.finish();
}

void cmd_select_keywords(const RunConfig& cfg, std::span<const Flavor> flavors, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  Provenance prov("select-keywords", cfg);
  save_run_config(cfg, layout, prov);
  for (Flavor f : flavors) {
    require_exists(layout.corpus(f) / "manifest.json", "run gen-corpus first");
    const Corpus corpus = load_corpus(layout.corpus(f));
    persist_keywords(f, resolve_keywords(cfg, corpus), layout, prov, log);
  }
  prov.finish();
}

void cmd_attack(const RunConfig& cfg, const AttackRequest& req, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  std::vector<Flavor> flavors = {req.flavor};
  if (req.context != req.flavor) flavors.push_back(req.context);
  const Arch archs[] = {req.arch};
  const Lab lab = load_lab(cfg, layout, std::span<const Flavor>(flavors), archs);
  const World& w = lab.world(req.flavor);
  const auto keywords = pick_keywords(w, req.keywords);
  Provenance prov("attack", cfg);
  save_run_config(cfg, layout, prov);
  const TrojanFamily fam = attack_keywords(w.model(req.arch), lab.world(req.context).corpus, lab.benign, keywords,
                                           attack_config(cfg));
  persist_family(fam, layout, prov, log);
  prov.finish();
}

std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const EvalRequest& req, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  Provenance prov("eval", cfg);
  save_run_config(cfg, layout, prov);
  std::vector<EvalReport> out;
  if (req.mode == "matrix") {
    std::vector<Flavor> flavors;
    for (Flavor f : {Flavor::Blobs, Flavor::Stripes}) {
      const bool trained = fs::exists(layout.model(Arch::A, f)) || fs::exists(layout.model(Arch::B, f));
      if (fs::exists(layout.corpus(f) / "manifest.json") && trained) flavors.push_back(f);
    }
    std::vector<Arch> archs;
    for (Arch a : {Arch::A, Arch::B}) {
      const bool everywhere = std::all_of(flavors.begin(), flavors.end(),
                                          [&](Flavor f) { return fs::exists(layout.model(a, f)); });
      if (everywhere) archs.push_back(a);
    }
    if (flavors.empty() || archs.empty()) raise(ErrorKind::Config, "matrix evaluation needs at least one corpus and model");
    const Lab lab = load_lab(cfg, layout, std::span<const Flavor>(flavors), std::span<const Arch>(archs));
    const MatrixResult res = run_experiment_matrix(
        lab, [&](const TrainedModel& attacker, const World& context, const World& eval_world) {
          return load_family(layout, attacker.tag(), context.flavor, eval_world.keywords, eval_world.corpus.vocab());
        });
    for (const auto& rep : res.reports) persist_report(rep, layout, prov, log);
    persist_matrix_summary(res.reports, layout, prov);
    out = res.reports;
  } else {
    const AttackMode mode = parse_attack_mode(req.mode);
    Arch attacker = req.arch;
    Flavor context = req.flavor;
    if (mode == AttackMode::SurrogateDataset) context = other_flavor(req.flavor);
    if (mode == AttackMode::SurrogateModel) attacker = req.arch == Arch::A ? Arch::B : Arch::A;
    const Flavor flavors[] = {req.flavor};
    const Arch archs[] = {req.arch};
    const Lab lab = load_lab(cfg, layout, flavors, archs);
    const World& w = lab.world(req.flavor);
    const std::string attack_net = std::string(to_string(attacker)) + "@" + to_string(req.flavor);
    const TrojanFamily fam = load_family(layout, attack_net, context, w.keywords, w.corpus.vocab());
    RankingDump dump;
    out.push_back(evaluate_family(w.model(req.arch), w, lab.benign, fam, mode, cfg.eval.k,
                                  req.rankings ? &dump : nullptr));
    persist_report(out.back(), layout, prov, log, req.rankings ? &dump : nullptr);
  }
  prov.finish();
  return out;
}

void cmd_ablate(const RunConfig& cfg, const AblateRequest& req, std::ostream& log) {
  if (req.which != "lambda" && req.which != "ratio") {
    raise(ErrorKind::Config, "ablation must be 'lambda' or 'ratio', not '" + req.which + "'");
  }
  const Layout layout(resolve_out_dir(cfg));
  const Flavor flavors[] = {req.flavor};
  const Arch archs[] = {req.arch};
  const Lab lab = load_lab(cfg, layout, flavors, archs);
  const std::string net = lab.world(req.flavor).model(req.arch).tag();
  Provenance prov("ablate", cfg);
  save_run_config(cfg, layout, prov);
  std::vector<TrojanSet> patches;
  if (req.which == "lambda") {
    const auto points = ablate_lambda(lab, req.arch, req.flavor, cfg.ablate.lambdas, cfg.ablate.seeds, &patches);
    persist_lambda(points, patches, net, layout, prov, log);
  } else {
    const auto points = ablate_patch_ratio(lab, req.arch, req.flavor, cfg.ablate.ratios, &patches);
    persist_ratio(points, patches, net, layout, prov, log);
  }
  prov.finish();
}

void cmd_dump_embeddings(const RunConfig& cfg, const EmbeddingRequest& req, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  require_exists(layout.corpus(req.flavor) / "manifest.json", "run gen-corpus first");
  const Corpus corpus = load_corpus(layout.corpus(req.flavor));
  const TrainedModel tm = load_trained(layout, req.arch, req.flavor);
  const std::string tag = family_tag(tm.tag(), req.context);
  const fs::path dir = layout.trojan_set(tag, req.keyword);
  corpus.vocab().id(req.keyword);
  if (!fs::exists(dir / "state.json")) {
    raise(ErrorKind::Config, "no trojan set for keyword '" + req.keyword + "' from " + tag + " (run attack first)");
  }
  const TrojanSet set = load_trojan_set(dir, corpus.vocab());
  Provenance prov("dump-embeddings", cfg);
  save_run_config(cfg, layout, prov);
  persist_embeddings(tm.model, tm.tag(), corpus, set, layout, prov, log);
  prov.finish();
}

PipelineResult run_pipeline(const RunConfig& cfg, std::ostream& log) {
  const Layout layout(resolve_out_dir(cfg));
  Provenance prov("pipeline", cfg);
  save_run_config(cfg, layout, prov);
  PipelineResult r;
  Lab& lab = r.lab;
  lab.cfg = cfg;

  auto start = std::chrono::steady_clock::now();
  lab.benign = make_benign(cfg);
  for (Flavor f : {Flavor::Blobs, Flavor::Stripes}) {
    World w;
    w.flavor = f;
    w.corpus = make_corpus(cfg, f);
    lab.worlds.push_back(std::move(w));
  }
  r.corpus_seconds = seconds_since(start);
  persist_benign(lab.benign, layout, prov, log);
  for (auto& w : lab.worlds) {
    persist_corpus(w.corpus, layout, prov, log);
    w.keywords = resolve_keywords(cfg, w.corpus);
    persist_keywords(w.flavor, w.keywords, layout, prov, log);
    for (Arch a : {Arch::A, Arch::B}) {
      start = std::chrono::steady_clock::now();
      w.models.push_back(train_model(cfg, w.corpus, a));
      r.train_seconds[w.models.back().tag()] = seconds_since(start);
      persist_model(w.models.back(), layout, prov, log);
    }
  }

  r.matrix = run_experiment_matrix(lab);
  for (const auto& [tag, fam] : r.matrix.families) persist_family(fam, layout, prov, log);
  for (const auto& rep : r.matrix.reports) persist_report(rep, layout, prov, log);
  persist_matrix_summary(r.matrix.reports, layout, prov);

  const std::string net = lab.world(Flavor::Blobs).model(Arch::A).tag();
  std::vector<TrojanSet> patches;
  r.lambda_sweep = ablate_lambda(lab, Arch::A, Flavor::Blobs, cfg.ablate.lambdas, cfg.ablate.seeds, &patches);
  persist_lambda(r.lambda_sweep, patches, net, layout, prov, log);
  patches.clear();
  r.ratio_sweep = ablate_patch_ratio(lab, Arch::A, Flavor::Blobs, cfg.ablate.ratios, &patches);
  persist_ratio(r.ratio_sweep, patches, net, layout, prov, log);

  // Embedding dumps for the ablation keywords.
  const World& blobs = lab.world(Flavor::Blobs);
  const TrojanFamily& wb = r.matrix.families.at(family_tag(net, Flavor::Blobs));
  for (const auto& kw : ablation_keywords(cfg, blobs.keywords)) {
    const auto by = wb.by_keyword();
    const auto it = by.find(kw.token);
    if (it != by.end()) persist_embeddings(blobs.model(Arch::A).model, net, blobs.corpus, *it->second, layout, prov, log);
  }
  prov.finish();
  return r;
}

}  // namespace tth
