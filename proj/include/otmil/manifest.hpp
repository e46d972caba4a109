#pragma once
// Dataset manifests: UTF-8, tab-separated, one header line. The fold column
// holds an integer or "-" when unassigned.

#include <otmil/common.hpp>
#include <otmil/csv.hpp>
#include <otmil/rng.hpp>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace otmil {

struct ManifestEntry {
  std::string bag_id;
  std::string path;  // relative to the manifest's directory
  double time = 0.0;
  bool event = false;
  int fold = -1;  // -1 = unassigned
  std::string cohort;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  static constexpr const char* kHeader = "bag_id\tpath\ttime\tevent\tfold\tcohort";

  int n_folds() const {
    int max_fold = -1;
    for (const auto& e : entries) max_fold = std::max(max_fold, e.fold);
    return max_fold + 1;
  }

  std::string to_text() const {
    std::string out = std::string(kHeader) + "\n";
    for (const auto& e : entries) {
      out += e.bag_id + "\t" + e.path + "\t" + format_g17(e.time) + "\t" +
             (e.event ? "1" : "0") + "\t" +
             (e.fold < 0 ? std::string("-") : std::to_string(e.fold)) + "\t" +
             e.cohort + "\n";
    }
    return out;
  }

  void write(const std::string& path) const { write_text_file(path, to_text()); }

  // check_paths verifies every referenced bag file exists next to the manifest.
  static Manifest read(const std::string& path, bool check_paths = true) {
    const std::string text = read_text_file(path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    Manifest m;
    std::set<std::string> seen;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      std::string line =
          text.substr(pos, nl == std::string::npos ? nl : nl - pos);
      pos = nl == std::string::npos ? text.size() : nl + 1;
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno == 1) {
        if (line != kHeader) {
          throw IoError(IoError::Code::Malformed,
                        path + ": bad manifest header");
        }
        continue;
      }
      if (trim(line).empty()) continue;
      const auto cells = split(line, '\t');
      if (cells.size() != 6) {
        throw IoError(IoError::Code::Malformed,
                      path + ": line " + std::to_string(lineno) +
                          ": expected 6 tab-separated fields");
      }
      ManifestEntry e;
      e.bag_id = cells[0];
      e.path = cells[1];
      if (!parse_double(cells[2], e.time) || !(e.time > 0.0)) {
        throw IoError(IoError::Code::Malformed,
                      path + ": line " + std::to_string(lineno) + ": bad time");
      }
      if (cells[3] == "1") {
        e.event = true;
      } else if (cells[3] == "0") {
        e.event = false;
      } else {
        throw IoError(IoError::Code::Malformed,
                      path + ": line " + std::to_string(lineno) + ": bad event");
      }
      if (cells[4] == "-") {
        e.fold = -1;
      } else {
        long long fold = 0;
        if (!parse_long(cells[4], fold) || fold < 0) {
          throw IoError(IoError::Code::Malformed,
                        path + ": line " + std::to_string(lineno) + ": bad fold");
        }
        e.fold = static_cast<int>(fold);
      }
      e.cohort = cells[5];
      if (!seen.insert(e.bag_id).second) {
        throw IoError(IoError::Code::Malformed,
                      path + ": duplicate bag_id '" + e.bag_id + "'");
      }
      if (check_paths && !std::filesystem::exists(base / e.path)) {
        throw IoError(IoError::Code::Missing,
                      path + ": referenced file missing: " + e.path);
      }
      m.entries.push_back(std::move(e));
    }
    return m;
  }
};

// Event-stratified k-fold assignment: fold sizes balanced within one, event
// counts balanced within one, deterministic given the seed.
inline Manifest split_folds(const Manifest& manifest, int k, std::uint64_t seed) {
  require(k >= 2, "split_folds requires k >= 2");
  std::vector<int> event_idx, censored_idx;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    (manifest.entries[i].event ? event_idx : censored_idx)
        .push_back(static_cast<int>(i));
  }
  if (static_cast<int>(manifest.entries.size()) < k ||
      static_cast<int>(event_idx.size()) < k) {
    throw std::invalid_argument(
        "split_folds: too few bags or events for the requested fold count");
  }
  Rng rng(seed);
  rng.shuffle(event_idx);
  rng.shuffle(censored_idx);

  Manifest out = manifest;
  std::vector<int> sizes(k, 0);
  for (std::size_t r = 0; r < event_idx.size(); ++r) {
    const int fold = static_cast<int>(r % k);
    out.entries[event_idx[r]].fold = fold;
    ++sizes[fold];
  }
  // censored bags go to whichever fold is currently smallest (ties by index)
  for (int idx : censored_idx) {
    int best = 0;
    for (int f = 1; f < k; ++f) {
      if (sizes[f] < sizes[best]) best = f;
    }
    out.entries[idx].fold = best;
    ++sizes[best];
  }
  return out;
}

}  // namespace otmil
