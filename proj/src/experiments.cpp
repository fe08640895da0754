#include "tthlab/experiments.hpp"

#include <chrono>
#include <cmath>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

namespace {

ImageShape world_shape(const RunConfig& cfg) {
  return {cfg.world.image_size, cfg.world.image_size, 3};
}

double rms_deviation(const PatchState& p) {
  const auto a = p.delta.pixels();
  const auto b = p.delta_o.pixels();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::string net_tag(Arch arch, Flavor flavor) {
  return std::string(to_string(arch)) + "@" + to_string(flavor);
}

}  // namespace

std::string TrainedModel::tag() const { return net_tag(arch, flavor); }

const TrainedModel& World::model(Arch arch) const {
  for (const auto& m : models) {
    if (m.arch == arch) return m;
  }
  raise(ErrorKind::Config, std::string("no arch ") + to_string(arch) + " model for " + to_string(flavor));
}

bool World::has_model(Arch arch) const {
  for (const auto& m : models) {
    if (m.arch == arch) return true;
  }
  return false;
}

const World& Lab::world(Flavor flavor) const {
  for (const auto& w : worlds) {
    if (w.flavor == flavor) return w;
  }
  raise(ErrorKind::Config, std::string("no ") + to_string(flavor) + " corpus in this run");
}

bool Lab::has_world(Flavor flavor) const {
  for (const auto& w : worlds) {
    if (w.flavor == flavor) return true;
  }
  return false;
}

std::map<TokenId, const TrojanSet*> TrojanFamily::by_keyword() const {
  std::map<TokenId, const TrojanSet*> out;
  for (const auto& s : sets) out[s.keyword] = &s;
  return out;
}

std::string family_tag(const std::string& attack_net, Flavor context) {
  return attack_net + "~" + to_string(context);
}

std::vector<KeywordInfo> resolve_keywords(const RunConfig& cfg, const Corpus& corpus) {
  if (cfg.eval.keywords.empty()) {
    return select_keywords(corpus, cfg.eval.per_pos, keyword_seed(cfg, corpus.flavor));
  }
  const auto freq = word_frequencies(corpus);
  std::vector<KeywordInfo> out;
  for (const auto& word : cfg.eval.keywords) {
    const auto id = corpus.vocab().find(word);
    if (!id) raise(ErrorKind::Keyword, "keyword '" + word + "' is not in the vocabulary");
    out.push_back({*id, word, corpus.vocab().pos(*id), freq[*id]});
  }
  return out;
}

Corpus make_corpus(const RunConfig& cfg, Flavor flavor) {
  return generate_corpus(corpus_seed(cfg), cfg.world.n_train, cfg.world.n_val, cfg.world.n_test,
                         world_params(cfg, flavor));
}

BenignSet make_benign(const RunConfig& cfg) {
  return generate_benign_set(benign_seed(cfg), cfg.world.n_benign, world_shape(cfg));
}

TrainedModel train_model(const RunConfig& cfg, const Corpus& corpus, Arch arch) {
  TrainedModel tm;
  tm.arch = arch;
  tm.flavor = corpus.flavor;
  auto [model, log] = train_matcher(corpus, matcher_hyper(cfg, arch, corpus.flavor));
  tm.model = std::move(model);
  tm.log = std::move(log);
  return tm;
}

Lab build_lab(const RunConfig& cfg, std::span<const Flavor> flavors, std::span<const Arch> archs) {
  Lab lab;
  lab.cfg = cfg;
  lab.benign = make_benign(cfg);
  for (Flavor f : flavors) {
    World w;
    w.flavor = f;
    w.corpus = make_corpus(cfg, f);
    w.keywords = resolve_keywords(cfg, w.corpus);
    for (Arch a : archs) w.models.push_back(train_model(cfg, w.corpus, a));
    lab.worlds.push_back(std::move(w));
  }
  return lab;
}

Lab build_lab(const RunConfig& cfg) {
  const Flavor flavors[] = {Flavor::Blobs, Flavor::Stripes};
  const Arch archs[] = {Arch::A, Arch::B};
  return build_lab(cfg, flavors, archs);
}

TrojanFamily attack_keywords(const TrainedModel& attacker, const Corpus& context_corpus,
                             const BenignSet& benign, std::span<const KeywordInfo> keywords,
                             const AttackConfig& cfg) {
  TrojanFamily fam;
  fam.attack_net = attacker.tag();
  fam.context_corpus = to_string(context_corpus.flavor);
  for (const auto& kw : keywords) {
    fam.sets.push_back(generate_trojan_set(attacker.model, context_corpus, benign, kw.token, cfg));
  }
  return fam;
}

EvalReport evaluate_family(const TrainedModel& eval_net, const World& eval_world,
                           const BenignSet& benign, const TrojanFamily& family, AttackMode mode,
                           std::size_t k, RankingDump* dump) {
  EvalSetup setup{family.attack_net, family.context_corpus, eval_net.tag(),
                  to_string(eval_world.flavor), mode};
  return evaluate_attack(eval_net.model, eval_world.corpus, benign, family.by_keyword(),
                         eval_world.keywords, setup, k, dump);
}

MatrixResult run_experiment_matrix(const Lab& lab) {
  const AttackConfig acfg = attack_config(lab.cfg);
  return run_experiment_matrix(lab, [&](const TrainedModel& attacker, const World& context, const World& eval_world) {
    return attack_keywords(attacker, context.corpus, lab.benign, eval_world.keywords, acfg);
  });
}

MatrixResult run_experiment_matrix(const Lab& lab, const FamilyProvider& provider) {
  MatrixResult out;
  const auto family = [&](const World& eval_world, const TrainedModel& attacker,
                          const World& context) -> const TrojanFamily& {
    const std::string tag = family_tag(attacker.tag(), context.flavor);
    auto it = out.families.find(tag);
    if (it == out.families.end()) {
      const auto start = std::chrono::steady_clock::now();
      TrojanFamily fam = provider(attacker, context, eval_world);
      out.attack_seconds[tag] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      it = out.families.emplace(tag, std::move(fam)).first;
    }
    return it->second;
  };
  const std::size_t k = lab.cfg.eval.k;
  for (const auto& w : lab.worlds) {
    for (const auto& m : w.models) {
      out.reports.push_back(evaluate_family(m, w, lab.benign, family(w, m, w), AttackMode::WhiteBox, k));
    }
  }
  for (const auto& w : lab.worlds) {
    if (!lab.has_world(other_flavor(w.flavor))) continue;
    const World& other = lab.world(other_flavor(w.flavor));
    for (const auto& m : w.models) {
      out.reports.push_back(evaluate_family(m, w, lab.benign, family(w, m, other),
                                            AttackMode::SurrogateDataset, k));
    }
  }
  for (const auto& w : lab.worlds) {
    for (const auto& m : w.models) {
      const Arch other_arch = m.arch == Arch::A ? Arch::B : Arch::A;
      if (!w.has_model(other_arch)) continue;
      out.reports.push_back(evaluate_family(m, w, lab.benign, family(w, w.model(other_arch), w),
                                            AttackMode::SurrogateModel, k));
    }
  }
  return out;
}

std::vector<KeywordInfo> ablation_keywords(const RunConfig& cfg, std::span<const KeywordInfo> keywords) {
  std::vector<KeywordInfo> out;
  for (Pos pos : {Pos::Noun, Pos::Verb, Pos::Adjective}) {
    std::size_t taken = 0;
    for (const auto& kw : keywords) {
      if (kw.pos == pos && taken < cfg.ablate.keywords_per_pos) {
        out.push_back(kw);
        ++taken;
      }
    }
  }
  if (out.empty()) raise(ErrorKind::Config, "no keywords available for the ablation sweep");
  return out;
}

std::vector<LambdaPoint> ablate_lambda(const Lab& lab, Arch arch, Flavor flavor,
                                       std::span<const double> lambdas, std::size_t seeds,
                                       std::vector<TrojanSet>* patches) {
  const World& w = lab.world(flavor);
  const TrainedModel& net = w.model(arch);
  const auto keywords = ablation_keywords(lab.cfg, w.keywords);
  std::vector<LambdaPoint> out;
  for (std::size_t s = 0; s < seeds; ++s) {
    AttackConfig acfg = attack_config(lab.cfg);
    BenignSet benign = lab.benign;
    if (s > 0) {
      const std::string suffix = "/" + std::to_string(s);
      acfg.seed = derive_seed(lab.cfg.seed, "ablate/attack" + suffix);
      benign = generate_benign_set(derive_seed(lab.cfg.seed, "ablate/benign" + suffix),
                                   lab.cfg.world.n_benign, w.corpus.image_shape());
    }
    std::vector<KeywordContext> contexts;
    for (const auto& kw : keywords) {
      contexts.push_back(build_keyword_context(net.model, w.corpus, kw.token, acfg.m, acfg.seed));
    }
    for (double lambda : lambdas) {
      if (!(lambda >= 0.0)) raise(ErrorKind::Config, "lambda must be non-negative");
      acfg.lambda = lambda;
      TrojanFamily fam;
      fam.attack_net = net.tag();
      fam.context_corpus = to_string(flavor);
      for (const auto& ctx : contexts) fam.sets.push_back(generate_trojan_set(net.model, ctx, benign, acfg));
      const EvalReport rep = evaluate_attack(net.model, w.corpus, benign, fam.by_keyword(), keywords,
                                             {net.tag(), fam.context_corpus, net.tag(), to_string(flavor),
                                              AttackMode::WhiteBox},
                                             lab.cfg.eval.k);
      LambdaPoint pt;
      pt.seed_index = s;
      pt.lambda = lambda;
      pt.trojan_r10 = rep.mean_row.trojan_r10_tth;
      std::size_t scannable = 0;
      for (const auto& ts : fam.sets) {
        pt.cell_accuracy += ts.usability.cell_accuracy;
        pt.rms_deviation += rms_deviation(ts.patch);
        scannable += ts.usability.scannable ? 1 : 0;
      }
      const double n = static_cast<double>(fam.sets.size());
      pt.cell_accuracy /= n;
      pt.rms_deviation /= n;
      pt.scannable_fraction = static_cast<double>(scannable) / n;
      pt.scannable = scannable == fam.sets.size();
      out.push_back(pt);
      if (patches) {
        for (auto& ts : fam.sets) patches->push_back(std::move(ts));
      }
    }
  }
  return out;
}

std::vector<RatioPoint> ablate_patch_ratio(const Lab& lab, Arch arch, Flavor flavor,
                                           std::span<const double> ratios,
                                           std::vector<TrojanSet>* patches) {
  const World& w = lab.world(flavor);
  const TrainedModel& net = w.model(arch);
  const auto keywords = ablation_keywords(lab.cfg, w.keywords);
  AttackConfig acfg = attack_config(lab.cfg);
  std::vector<KeywordContext> contexts;
  for (const auto& kw : keywords) {
    contexts.push_back(build_keyword_context(net.model, w.corpus, kw.token, acfg.m, acfg.seed));
  }
  std::vector<RatioPoint> out;
  for (double ratio : ratios) {
    if (!(ratio > 0.0 && ratio < 1.0)) raise(ErrorKind::Config, "patch ratios must be in (0, 1)");
    acfg.patch_ratio = ratio;
    TrojanFamily fam;
    fam.attack_net = net.tag();
    fam.context_corpus = to_string(flavor);
    for (const auto& ctx : contexts) fam.sets.push_back(generate_trojan_set(net.model, ctx, lab.benign, acfg));
    const EvalReport rep = evaluate_attack(net.model, w.corpus, lab.benign, fam.by_keyword(), keywords,
                                           {net.tag(), fam.context_corpus, net.tag(), to_string(flavor),
                                            AttackMode::WhiteBox},
                                           lab.cfg.eval.k);
    RatioPoint pt;
    pt.ratio = ratio;
    pt.side = fam.sets.front().patch.mask.side();
    pt.trojan_r10 = rep.mean_row.trojan_r10_tth;
    pt.relevant_r10 = rep.mean_row.relevant_r10_tth;
    out.push_back(pt);
    if (patches) {
      for (auto& ts : fam.sets) patches->push_back(std::move(ts));
    }
  }
  return out;
}

std::vector<EmbeddingRow> dump_embeddings(const MatcherModel& model, const Corpus& corpus,
                                          const TrojanSet& trojans, TokenId keyword) {
  const QuerySet qs = build_query_set(corpus, Split::Test, keyword);
  std::vector<EmbeddingRow> rows;
  for (const auto* item : corpus.split(Split::Test)) {
    rows.push_back({item->id, "image", embed_image(model, item->image).vec});
  }
  for (const auto& q : qs.queries) {
    rows.push_back({q.relevant.front(), "keyword-text", embed_text(model, q.caption).vec});
  }
  for (std::size_t i = 0; i < trojans.images.size(); ++i) {
    rows.push_back({kTrojanIdBase + static_cast<ImageId>(i), "trojan", embed_image(model, trojans.images[i]).vec});
  }
  return rows;
}

}  // namespace tth
