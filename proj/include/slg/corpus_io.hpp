#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slg/common.hpp"
#include "slg/corpus.hpp"

namespace slg {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Feature blobs: magic "SGF1", u32 t_frames, u32 d_feat, then row-major
// float32 data, everything little-endian. Round-trips must be bit-exact.
// ---------------------------------------------------------------------------

inline constexpr char kBlobMagic[4] = {'S', 'G', 'F', '1'};

inline void write_feature_blob(const fs::path& path, const FrameBlob& blob) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw errf("cannot write feature blob: %s", path.string().c_str());
  out.write(kBlobMagic, 4);
  out.write(reinterpret_cast<const char*>(&blob.t_frames), 4);
  out.write(reinterpret_cast<const char*>(&blob.d_feat), 4);
  out.write(reinterpret_cast<const char*>(blob.data.data()),
            static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
  if (!out) throw errf("short write on feature blob: %s", path.string().c_str());
}

inline FrameBlob read_feature_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw errf("missing feature blob: %s", path.string().c_str());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kBlobMagic, 4) != 0)
    throw errf("corrupt feature blob header (bad magic): %s", path.string().c_str());
  FrameBlob blob;
  in.read(reinterpret_cast<char*>(&blob.t_frames), 4);
  in.read(reinterpret_cast<char*>(&blob.d_feat), 4);
  if (!in) throw errf("corrupt feature blob header (truncated dims): %s",
                      path.string().c_str());
  if (blob.t_frames < 1 || blob.d_feat < 1)
    throw errf("corrupt feature blob header (zero dims): %s", path.string().c_str());
  const std::size_t n =
      static_cast<std::size_t>(blob.t_frames) * blob.d_feat;
  blob.data.resize(n);
  in.read(reinterpret_cast<char*>(blob.data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw errf("feature blob length mismatch: %s expects %zu bytes of data, got %zu",
               path.string().c_str(), n * sizeof(float),
               static_cast<std::size_t>(in.gcount()));
  in.peek();
  if (!in.eof())
    throw errf("feature blob length mismatch: %s has trailing bytes",
               path.string().c_str());
  return blob;
}

// ---------------------------------------------------------------------------
// Corpus directory: manifest.jsonl with one session per line plus a
// features/ subdirectory of blobs.
// ---------------------------------------------------------------------------

inline std::string feature_file_name(const Session& s, std::size_t ordinal) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "features/%s_r%02zu.sgf",
                s.session_id.c_str(), ordinal);
  return buf;
}

inline void write_corpus(const std::vector<Session>& sessions,
                         const fs::path& dir) {
  fs::create_directories(dir / "features");
  std::ofstream manifest(dir / "manifest.jsonl",
                         std::ios::binary | std::ios::trunc);
  if (!manifest)
    throw errf("cannot write manifest: %s", (dir / "manifest.jsonl").string().c_str());
  for (const auto& s : sessions) {
    ordered_json j;
    j["session_id"] = s.session_id;
    j["labels"] = {{"p1", s.labels.p1},
                   {"p3", s.labels.p3},
                   {"p4", s.labels.p4},
                   {"p5", s.labels.p5},
                   {"overall", s.labels.overall}};
    j["mask"] = s.mask.m;
    ordered_json rs = ordered_json::array();
    for (std::size_t i = 0; i < s.responses.size(); ++i) {
      const auto& r = s.responses[i];
      const std::string file = feature_file_name(s, i);
      rs.push_back({{"part", part_name(r.part)},
                    {"index", r.index_in_part},
                    {"prompt", r.prompt_text},
                    {"feature_file", file},
                    {"t_frames", r.features.t_frames},
                    {"d_feat", r.features.d_feat},
                    {"duration_s", r.duration_s}});
      write_feature_blob(dir / file, r.features);
    }
    j["responses"] = std::move(rs);
    manifest << j.dump() << "\n";
  }
  if (!manifest) throw errf("short write on manifest in %s", dir.string().c_str());
}

inline std::vector<Session> read_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.jsonl";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw errf("missing manifest: %s", manifest_path.string().c_str());
  std::vector<Session> sessions;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw errf("manifest parse error at %s line %d: %s",
                 manifest_path.string().c_str(), line_no, e.what());
    }
    Session s;
    try {
      s.session_id = j.at("session_id").get<std::string>();
      const auto& labels = j.at("labels");
      s.labels.p1 = labels.at("p1").get<double>();
      s.labels.p3 = labels.at("p3").get<double>();
      s.labels.p4 = labels.at("p4").get<double>();
      s.labels.p5 = labels.at("p5").get<double>();
      s.labels.overall = labels.at("overall").get<double>();
      const auto& mask = j.at("mask");
      if (mask.size() != 5) throw errf("mask must have 5 entries");
      for (std::size_t k = 0; k < 5; ++k) s.mask.m[k] = mask.at(k).get<bool>();
      for (const auto& rj : j.at("responses")) {
        Response r;
        r.part = part_from_name(rj.at("part").get<std::string>());
        r.index_in_part = rj.at("index").get<int>();
        r.prompt_text = rj.at("prompt").get<std::string>();
        r.duration_s = rj.at("duration_s").get<double>();
        const auto file = rj.at("feature_file").get<std::string>();
        r.features = read_feature_blob(dir / file);
        if (r.features.t_frames != rj.at("t_frames").get<std::uint32_t>() ||
            r.features.d_feat != rj.at("d_feat").get<std::uint32_t>()) {
          throw errf("feature dimension mismatch for %s: manifest says %ux%u, blob has %ux%u",
                     file.c_str(), rj.at("t_frames").get<std::uint32_t>(),
                     rj.at("d_feat").get<std::uint32_t>(), r.features.t_frames,
                     r.features.d_feat);
        }
        s.responses.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      throw errf("manifest error at %s line %d: %s",
                 manifest_path.string().c_str(), line_no, e.what());
    }
    sessions.push_back(std::move(s));
  }
  return sessions;
}

// Content digest of a split's manifest, used to refuse cross-corpus
// comparisons downstream.
inline std::string corpus_hash(const fs::path& dir) {
  const std::string bytes = read_file(dir / "manifest.jsonl");
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace slg
