#include "tthlab/report_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

using nlohmann::json;

namespace {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) raise(ErrorKind::Format, "bad number '" + s + "' in CSV");
  return v;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json loss_json(const LossPoint& lp) {
  return {{"total", lp.total}, {"attack", lp.attack}, {"usability", lp.usability}};
}

std::string image_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu.ppm", prefix, i);
  return buf;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string report_csv(const EvalReport& report) {
  std::string out = "keyword,relevant_r10_clean,relevant_r10_tth,trojan_r10_clean,trojan_r10_tth,mcs,queries\n";
  const auto row = [&](const EvalRow& r) {
    out += r.keyword + "," + format_double(r.relevant_r10_clean) + "," + format_double(r.relevant_r10_tth) +
           "," + format_double(r.trojan_r10_clean) + "," + format_double(r.trojan_r10_tth) + "," +
           format_double(r.mcs) + "," + std::to_string(r.queries) + "\n";
  };
  for (const auto& r : report.rows) row(r);
  row(report.mean_row);
  return out;
}

std::vector<EvalRow> parse_report_csv(std::string_view csv) {
  const auto lines = lines_of(csv);
  if (lines.empty()) raise(ErrorKind::Format, "empty report CSV");
  std::vector<EvalRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_line(lines[i]);
    if (f.size() != 7) raise(ErrorKind::Format, "report CSV row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
    EvalRow r;
    r.keyword = f[0];
    r.relevant_r10_clean = parse_double(f[1]);
    r.relevant_r10_tth = parse_double(f[2]);
    r.trojan_r10_clean = parse_double(f[3]);
    r.trojan_r10_tth = parse_double(f[4]);
    r.mcs = parse_double(f[5]);
    r.queries = static_cast<std::size_t>(parse_double(f[6]));
    rows.push_back(r);
  }
  return rows;
}

json report_json(const EvalReport& report) {
  json rows = json::array();
  const auto row = [](const EvalRow& r) {
    return json{{"keyword", r.keyword},
                {"relevant_r10_clean", r.relevant_r10_clean},
                {"relevant_r10_tth", r.relevant_r10_tth},
                {"trojan_r10_clean", r.trojan_r10_clean},
                {"trojan_r10_tth", r.trojan_r10_tth},
                {"mcs", r.mcs},
                {"queries", r.queries}};
  };
  std::vector<double> mcs, r10;
  for (const auto& r : report.rows) {
    rows.push_back(row(r));
    mcs.push_back(r.mcs);
    r10.push_back(r.trojan_r10_tth);
  }
  json j = {{"setup",
             {{"attack_net", report.setup.attack_net},
              {"train_corpus", report.setup.train_corpus},
              {"eval_net", report.setup.eval_net},
              {"eval_corpus", report.setup.eval_corpus},
              {"mode", to_string(report.setup.mode)}}},
            {"rows", rows},
            {"mean", row(report.mean_row)}};
  if (report.rows.size() >= 2) j["spearman_mcs_trojan_r10"] = spearman(mcs, r10);
  return j;
}

std::string report_file_stem(const EvalReport& r) {
  std::string stem = std::string(to_string(r.setup.mode)) + "_" + r.setup.eval_net + "_from_" +
                     r.setup.attack_net + "~" + r.setup.train_corpus;
  for (char& c : stem) {
    if (c == '@') c = '-';
    if (c == '~') c = '-';
  }
  return stem;
}

json ranking_json(const RankingDump& dump) {
  json out = json::array();
  for (const auto& e : dump.entries) {
    json top = json::array();
    for (const auto& s : e.top) top.push_back({{"id", s.id}, {"score", s.score}});
    out.push_back({{"keyword", e.keyword},
                   {"condition", e.condition},
                   {"caption", e.caption},
                   {"relevant", e.relevant},
                   {"novel", e.novel},
                   {"top", top}});
  }
  return out;
}

std::string lambda_csv(std::span<const LambdaPoint> points) {
  std::string out = "seed_index,lambda,trojan_r10,cell_accuracy,scannable_fraction,scannable,rms_deviation\n";
  for (const auto& p : points) {
    out += std::to_string(p.seed_index) + "," + format_double(p.lambda) + "," + format_double(p.trojan_r10) + "," +
           format_double(p.cell_accuracy) + "," + format_double(p.scannable_fraction) + "," +
           (p.scannable ? "1" : "0") + "," + format_double(p.rms_deviation) + "\n";
  }
  return out;
}

std::string ratio_csv(std::span<const RatioPoint> points) {
  std::string out = "ratio,side,trojan_r10,relevant_r10\n";
  for (const auto& p : points) {
    out += format_double(p.ratio) + "," + std::to_string(p.side) + "," + format_double(p.trojan_r10) + "," +
           format_double(p.relevant_r10) + "\n";
  }
  return out;
}

std::string embeddings_csv(std::span<const EmbeddingRow> rows) {
  std::string out = "id,origin";
  const std::size_t d = rows.empty() ? 0 : rows.front().vec.size();
  for (std::size_t i = 0; i < d; ++i) out += ",e" + std::to_string(i);
  out += "\n";
  for (const auto& r : rows) {
    if (r.vec.size() != d) raise(ErrorKind::Dimension, "embedding rows differ in length");
    out += std::to_string(r.id) + "," + r.origin;
    for (double v : r.vec) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

std::vector<EmbeddingRow> parse_embeddings_csv(std::string_view csv) {
  const auto lines = lines_of(csv);
  if (lines.empty()) raise(ErrorKind::Format, "empty embedding CSV");
  const std::size_t width = split_line(lines[0]).size();
  std::vector<EmbeddingRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_line(lines[i]);
    if (f.size() != width || width < 2) raise(ErrorKind::Format, "embedding CSV row " + std::to_string(i) + " has the wrong width");
    EmbeddingRow r;
    r.id = static_cast<ImageId>(std::stoll(f[0]));
    r.origin = f[1];
    for (std::size_t j = 2; j < f.size(); ++j) r.vec.push_back(parse_double(f[j]));
    rows.push_back(std::move(r));
  }
  return rows;
}

json train_log_json(const TrainedModel& m) {
  return {{"net", m.tag()},
          {"arch_tag", m.model.arch_tag()},
          {"epochs", m.log.epochs},
          {"losses", m.log.losses},
          {"val_r10", m.log.val_r10}};
}

json keywords_json(std::span<const KeywordInfo> keywords) {
  json out = json::array();
  for (const auto& k : keywords) {
    out.push_back({{"word", k.word}, {"token", k.token}, {"pos", to_string(k.pos)}, {"frequency", k.frequency}});
  }
  return out;
}

std::vector<KeywordInfo> keywords_from_json(const json& j, const Vocabulary& vocab) {
  std::vector<KeywordInfo> out;
  try {
    for (const auto& k : j) {
      KeywordInfo info;
      info.word = k.at("word").get<std::string>();
      info.token = vocab.id(info.word);
      info.pos = vocab.pos(info.token);
      info.frequency = k.at("frequency").get<std::size_t>();
      out.push_back(info);
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, std::string("bad keyword list: ") + e.what());
  }
  return out;
}

Provenance::Provenance(std::string command, const RunConfig& cfg)
    : command_(std::move(command)), config_hash_(config_hash(cfg)) {}

void Provenance::write(const std::filesystem::path& path, std::string_view bytes) {
  write_file(path, bytes);
  files_[path.parent_path()][path.filename().string()] = {
      {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}, {"command", command_}};
}

void Provenance::write_image(const std::filesystem::path& path, const Image& image) {
  write(path, encode_ppm(image));
}

void Provenance::record(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  files_[path.parent_path()][path.filename().string()] = {
      {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}, {"command", command_}};
}

void Provenance::finish() const {
  for (const auto& [dir, entries] : files_) {
    const auto path = dir / "provenance.json";
    json doc = {{"tool", "tthlab"}, {"version", kToolVersion}, {"files", json::object()}};
    if (std::filesystem::exists(path)) {
      try {
        doc = json::parse(read_file(path));
      } catch (const json::exception&) {
        // An unreadable sidecar is replaced.
      }
    }
    doc["tool"] = "tthlab";
    doc["version"] = kToolVersion;
    doc["config_hash"] = config_hash_;
    for (const auto& [name, entry] : entries) {
      json e = entry;
      e["config_hash"] = config_hash_;
      doc["files"][name] = e;
    }
    write_file(path, doc.dump(2) + "\n");
  }
}

json trojan_state_json(const TrojanSet& s) {
  const auto& p = s.patch;
  json trace = json::array();
  for (const auto& lp : p.trace) trace.push_back({lp.total, lp.attack, lp.usability});
  return {{"keyword", s.word},
          {"token", s.keyword},
          {"lambda", p.lambda},
          {"eta", p.eta},
          {"max_iters", p.max_iters},
          {"iterations", p.iter},
          {"restarted", s.restarted},
          {"converged", s.converged},
          {"mask",
           {{"image", {p.mask.image.height, p.mask.image.width, p.mask.image.channels}},
            {"patch_ratio", p.mask.patch_ratio},
            {"placement", to_string(p.mask.placement)},
            {"offset_y", p.mask.offset_y},
            {"offset_x", p.mask.offset_x},
            {"side", p.mask.side()}}},
          {"context",
           {{"sentences", s.context.sentences.size()},
            {"available", s.context.available},
            {"mcs", s.context.mcs},
            {"e_w", s.context.e_w.vec}}},
          {"initial", loss_json(s.initial)},
          {"best", loss_json(s.best)},
          {"final", loss_json(s.final)},
          {"usability",
           {{"cell_accuracy", s.usability.cell_accuracy},
            {"parity_ok", s.usability.parity_ok},
            {"scannable", s.usability.scannable}}},
          {"beacon_k", s.beacon.k},
          {"source_benign_ids", s.source_benign_ids},
          {"trace_columns", {"total", "attack", "usability"}},
          {"trace", trace}};
}

void save_trojan_set(const TrojanSet& set, const std::filesystem::path& dir, Provenance& prov) {
  prov.write_image(dir / "anchor.ppm", quantized(set.patch.delta_o));
  prov.write_image(dir / "patch.ppm", quantized(set.patch.delta));
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    prov.write_image(dir / image_name("trojan", i), quantized(set.images[i]));
  }
  prov.write(dir / "state.json", trojan_state_json(set).dump(2) + "\n");
}

TrojanSet load_trojan_set(const std::filesystem::path& dir, const Vocabulary& vocab) {
  TrojanSet s;
  json j;
  try {
    j = json::parse(read_file(dir / "state.json"));
    s.word = j.at("keyword").get<std::string>();
    s.keyword = vocab.id(s.word);
    s.context.keyword = s.keyword;
    s.context.word = s.word;
    s.context.mcs = j.at("context").at("mcs").get<double>();
    s.context.available = j.at("context").at("available").get<std::size_t>();
    s.context.e_w.vec = j.at("context").at("e_w").get<std::vector<double>>();
    s.restarted = j.at("restarted").get<bool>();
    s.converged = j.at("converged").get<bool>();
    s.patch.lambda = j.at("lambda").get<double>();
    s.patch.eta = j.at("eta").get<double>();
    s.patch.max_iters = j.at("max_iters").get<std::size_t>();
    s.patch.iter = j.at("iterations").get<std::size_t>();
    const auto& m = j.at("mask");
    const auto shape = m.at("image").get<std::vector<std::size_t>>();
    if (shape.size() != 3) raise(ErrorKind::Format, "bad mask image shape");
    s.patch.mask = {{shape[0], shape[1], shape[2]}, m.at("patch_ratio").get<double>(),
                    parse_placement(m.at("placement").get<std::string>()), m.at("offset_y").get<std::size_t>(),
                    m.at("offset_x").get<std::size_t>()};
    s.usability.cell_accuracy = j.at("usability").at("cell_accuracy").get<double>();
    s.usability.parity_ok = j.at("usability").at("parity_ok").get<bool>();
    s.usability.scannable = j.at("usability").at("scannable").get<bool>();
    s.source_benign_ids = j.at("source_benign_ids").get<std::vector<std::size_t>>();
    for (const auto& t : j.at("trace")) {
      s.patch.trace.push_back({t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()});
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, (dir / "state.json").string() + ": " + e.what());
  }
  s.patch.delta = read_ppm(dir / "patch.ppm");
  s.patch.delta_o = read_ppm(dir / "anchor.ppm");
  for (std::size_t i = 0; i < s.source_benign_ids.size(); ++i) s.images.push_back(read_ppm(dir / image_name("trojan", i)));
  return s;
}

}  // namespace tth
