#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pretext/dataset.hpp"
#include "pretext/error.hpp"

namespace pretext {

using ordered_json = nlohmann::ordered_json;

std::vector<size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].split == split) out.push_back(i);
  }
  return out;
}

std::string DatasetManifest::track_path(size_t index) const {
  return (std::filesystem::path(root_dir) / tracks.at(index).path).string();
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise<DataError>("manifest: cannot open ", path);
  DatasetManifest m;
  m.root_dir = std::filesystem::path(path).parent_path().string();

  std::string line;
  int64_t line_no = 0;
  bool have_header = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      raise<DataError>("manifest: ", path, " line ", line_no, ": invalid JSON (", e.what(), ")");
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (have_header) raise<DataError>("manifest: ", path, " line ", line_no, ": duplicate header");
      if (!j.contains("label_names") || !j["label_names"].is_array()) {
        raise<DataError>("manifest: ", path, " line ", line_no, ": header lacks label_names");
      }
      for (const auto& n : j["label_names"]) m.label_names.push_back(n.get<std::string>());
      have_header = true;
    } else if (type == "track") {
      if (!have_header) {
        raise<DataError>("manifest: ", path, " line ", line_no, ": track before header");
      }
      TrackInfo t;
      try {
        t.id = j.at("id").get<int64_t>();
        t.path = j.at("path").get<std::string>();
        t.split = j.at("split").get<std::string>();
        t.duration_s = j.at("duration_s").get<double>();
        for (const auto& v : j.at("labels")) t.labels.push_back(v.get<int>());
      } catch (const std::exception& e) {
        raise<DataError>("manifest: ", path, " line ", line_no, ": bad track record (", e.what(),
                         ")");
      }
      if (t.labels.size() != m.label_names.size()) {
        raise<DataError>("manifest: ", path, " line ", line_no, ": track has ", t.labels.size(),
                         " labels, header names ", m.label_names.size());
      }
      for (int v : t.labels) {
        if (v != 0 && v != 1) {
          raise<DataError>("manifest: ", path, " line ", line_no, ": labels must be 0 or 1");
        }
      }
      if (t.split != "train" && t.split != "val" && t.split != "test") {
        raise<DataError>("manifest: ", path, " line ", line_no, ": unknown split '", t.split, "'");
      }
      m.tracks.push_back(std::move(t));
    } else {
      raise<DataError>("manifest: ", path, " line ", line_no, ": unknown record type '", type, "'");
    }
  }
  if (!have_header) raise<DataError>("manifest: ", path, " has no header line");
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path);
  if (!f) raise<DataError>("manifest: cannot create ", path);
  ordered_json header;
  header["type"] = "header";
  header["version"] = 1;
  header["label_names"] = m.label_names;
  f << header.dump() << "\n";
  for (const TrackInfo& t : m.tracks) {
    ordered_json j;
    j["type"] = "track";
    j["id"] = t.id;
    j["path"] = t.path;
    j["labels"] = t.labels;
    j["split"] = t.split;
    j["duration_s"] = t.duration_s;
    f << j.dump() << "\n";
  }
  if (!f) raise<DataError>("manifest: failed writing ", path);
}

}  // namespace pretext
