#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tthlab/commands.hpp"
#include "tthlab/config.hpp"
#include "tthlab/error.hpp"

namespace {

std::vector<tth::Flavor> flavors_of(const std::string& s) {
  if (s == "all") return {tth::Flavor::Blobs, tth::Flavor::Stripes};
  return {tth::parse_flavor(s)};
}

std::vector<tth::Arch> archs_of(const std::string& s) {
  if (s == "all") return {tth::Arch::A, tth::Arch::B};
  return {tth::parse_arch(s)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted Trojan-horse patch lab for a synthetic language-based image retrieval system"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--set", overrides, "Override a config key, e.g. --set attack.lambda=1");
  app.add_option("--out", out_dir, "Output root (default $TTHLAB_OUT, else ./tthlab_out)");

  std::string flavor = "all", arch = "all";
  auto* gen = app.add_subcommand("gen-corpus", "Generate corpora and the benign carrier set");
  gen->add_option("--flavor", flavor, "blobs, stripes or all");

  auto* train = app.add_subcommand("train", "Train matchers on saved corpora");
  train->add_option("--flavor", flavor, "blobs, stripes or all");
  train->add_option("--arch", arch, "A, B or all");

  auto* select = app.add_subcommand("select-keywords", "Pick the attack keywords per part of speech");
  select->add_option("--flavor", flavor, "blobs, stripes or all");

  tth::AttackRequest attack_req;
  std::string attack_arch = "A", attack_flavor = "blobs", attack_context;
  bool all_keywords = false;
  auto* attack = app.add_subcommand("attack", "Generate trojan sets for keywords");
  attack->add_option("--arch", attack_arch, "Attacking matcher arch");
  attack->add_option("--flavor", attack_flavor, "Corpus the attacking matcher was trained on");
  attack->add_option("--context", attack_context, "Corpus whose captions give e(w) (default: --flavor)");
  auto* kw_opt = attack->add_option("--keyword", attack_req.keywords, "Keyword to attack (repeatable)");
  attack->add_flag("--all-keywords", all_keywords, "Attack every selected keyword")->excludes(kw_opt);

  tth::EvalRequest eval_req;
  std::string eval_arch = "A", eval_flavor = "blobs";
  auto* eval = app.add_subcommand("eval", "Evaluate saved trojan sets");
  eval->add_option("--mode", eval_req.mode, "white-box, surrogate-dataset, surrogate-model or matrix")
      ->check(CLI::IsMember({"white-box", "surrogate-dataset", "surrogate-model", "matrix"}));
  eval->add_option("--arch", eval_arch, "Evaluated matcher arch");
  eval->add_option("--flavor", eval_flavor, "Evaluated corpus");
  eval->add_flag("--rankings", eval_req.rankings, "Also dump per-query top-k rankings");

  tth::AblateRequest ablate_req;
  std::string ablate_arch = "A", ablate_flavor = "blobs";
  auto* ablate = app.add_subcommand("ablate", "Lambda or patch-ratio sweep");
  ablate->add_option("--which", ablate_req.which, "lambda or ratio")->required()->check(CLI::IsMember({"lambda", "ratio"}));
  ablate->add_option("--arch", ablate_arch, "Matcher arch");
  ablate->add_option("--flavor", ablate_flavor, "Corpus");

  tth::EmbeddingRequest emb_req;
  std::string emb_arch = "A", emb_flavor = "blobs", emb_context;
  auto* emb = app.add_subcommand("dump-embeddings", "Write image, caption and trojan embeddings for one keyword");
  emb->add_option("--arch", emb_arch, "Matcher arch");
  emb->add_option("--flavor", emb_flavor, "Corpus");
  emb->add_option("--context", emb_context, "Context corpus of the trojan set (default: --flavor)");
  emb->add_option("--keyword", emb_req.keyword, "Keyword")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Every stage end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tth::exit_code_for(tth::ErrorKind::Config);
  }

  try {
    tth::RunConfig cfg = config_path.empty() ? tth::RunConfig{} : tth::load_config(config_path);
    for (const auto& o : overrides) cfg = tth::apply_override(cfg, o);
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (gen->parsed()) {
      tth::cmd_gen_corpus(cfg, flavors_of(flavor), std::cout);
    } else if (train->parsed()) {
      tth::cmd_train(cfg, archs_of(arch), flavors_of(flavor), std::cout);
    } else if (select->parsed()) {
      tth::cmd_select_keywords(cfg, flavors_of(flavor), std::cout);
    } else if (attack->parsed()) {
      if (attack_req.keywords.empty() && !all_keywords) {
        throw tth::Error(tth::ErrorKind::Config, "attack needs --keyword or --all-keywords");
      }
      attack_req.arch = tth::parse_arch(attack_arch);
      attack_req.flavor = tth::parse_flavor(attack_flavor);
      attack_req.context = attack_context.empty() ? attack_req.flavor : tth::parse_flavor(attack_context);
      tth::cmd_attack(cfg, attack_req, std::cout);
    } else if (eval->parsed()) {
      eval_req.arch = tth::parse_arch(eval_arch);
      eval_req.flavor = tth::parse_flavor(eval_flavor);
      tth::cmd_eval(cfg, eval_req, std::cout);
    } else if (ablate->parsed()) {
      ablate_req.arch = tth::parse_arch(ablate_arch);
      ablate_req.flavor = tth::parse_flavor(ablate_flavor);
      tth::cmd_ablate(cfg, ablate_req, std::cout);
    } else if (emb->parsed()) {
      emb_req.arch = tth::parse_arch(emb_arch);
      emb_req.flavor = tth::parse_flavor(emb_flavor);
      emb_req.context = emb_context.empty() ? emb_req.flavor : tth::parse_flavor(emb_context);
      tth::cmd_dump_embeddings(cfg, emb_req, std::cout);
    } else if (pipeline->parsed()) {
      tth::run_pipeline(cfg, std::cout);
    }
  } catch (const tth::Error& e) {
    std::cerr << "tthlab: " << e.what() << "\n";
    return tth::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "tthlab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
