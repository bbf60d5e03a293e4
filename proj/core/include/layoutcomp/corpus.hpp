#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "layoutcomp/layout.hpp"

namespace layoutcomp {

/// Element categories, one name per line; the line number is the type id.
class TypeManifest {
 public:
  TypeManifest() = default;
  explicit TypeManifest(std::vector<std::string> names);

  static TypeManifest load(const std::filesystem::path& path);
  /// The 25 component categories shipped in data/types.txt.
  static TypeManifest builtin();

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<size_t>(id)); }
  std::optional<int> find(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

struct CorpusStats {
  int num_layouts = 0;
  double mean_nodes = 0;
  int max_nodes = 0;
  int min_nodes = 0;
  double mean_depth = 0;  // mean over layouts of the deepest node's depth
  int max_depth = 0;
  int min_depth = 0;
  std::vector<long long> type_histogram;
};

CorpusStats compute_stats(const std::vector<LayoutTree>& trees, int num_types);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyCorpus : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IngestOptions {
  /// Type used for a root without "componentLabel" (screens are usually unlabeled).
  std::string root_label;
  /// Shuffle sibling order instead of sorting in reading order.
  bool shuffle_children = false;
  std::uint64_t shuffle_seed = 0;
};

/// Parses one layout document ({"id","width","height","root"}), discretizes and validates it.
/// Throws ParseError for malformed documents and ValidationError/InvalidBounds for rejects.
LayoutTree parse_layout_document(const std::string& text, const TypeManifest& manifest, const IngestOptions& options = {});

struct IngestResult {
  std::vector<LayoutTree> trees;  // sorted by source_id
  CorpusStats stats;
  int parse_errors = 0;
  std::map<std::string, int> rejects;  // reason -> count
  int total_rejects() const;
};

IngestResult ingest_corpus(const std::filesystem::path& directory, const TypeManifest& manifest,
                           const IngestOptions& options = {});

// ---- grid-unit tree files ---------------------------------------------------
// A node is {"type": name, "bounds": [x, y, x2, y2], "terminal": bool, "children": [...]}.

std::string tree_to_json(const LayoutTree& tree, const TypeManifest& manifest, const std::vector<bool>* predicted = nullptr);

/// Parses a grid-unit node tree; field errors are reported with their JSON path.
/// Children are kept in document order unless `sort_children` is set.
LayoutTree tree_from_json(const std::string& text, const TypeManifest& manifest, bool sort_children = true);

/// Corpus bundle: JSON lines, each {"id": string, "root": node}.
void save_corpus(const std::filesystem::path& path, const std::vector<LayoutTree>& trees, const TypeManifest& manifest);
std::vector<LayoutTree> load_corpus(const std::filesystem::path& path, const TypeManifest& manifest);

}  // namespace layoutcomp
