#include "layoutcomp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace layoutcomp {

using nlohmann::json;

TypeManifest::TypeManifest(std::vector<std::string> names) : names_(std::move(names)) {
  for (size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate type name '" + names_[i] + "' in manifest");
    }
  }
}

TypeManifest TypeManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open type manifest " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    names.push_back(line);
  }
  if (names.empty()) throw std::runtime_error("type manifest " + path.string() + " is empty");
  return TypeManifest(std::move(names));
}

TypeManifest TypeManifest::builtin() {
  return TypeManifest({"Text", "Image", "Icon", "Text Button", "List Item", "Input", "Background Image", "Card",
                       "Web View", "Radio Button", "Drawer", "Checkbox", "Advertisement", "Modal", "Pager Indicator",
                       "Slider", "On/Off Switch", "Button Bar", "Toolbar", "Number Stepper", "Multi-Tab",
                       "Date Picker", "Map View", "Video", "Bottom Navigation"});
}

std::optional<int> TypeManifest::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

CorpusStats compute_stats(const std::vector<LayoutTree>& trees, int num_types) {
  CorpusStats s;
  s.type_histogram.assign(static_cast<size_t>(num_types), 0);
  s.num_layouts = static_cast<int>(trees.size());
  if (trees.empty()) return s;
  s.min_nodes = s.min_depth = std::numeric_limits<int>::max();
  double nodes = 0, depth = 0;
  for (const auto& t : trees) {
    nodes += t.size();
    const int d = t.max_depth();
    depth += d;
    s.max_nodes = std::max(s.max_nodes, t.size());
    s.min_nodes = std::min(s.min_nodes, t.size());
    s.max_depth = std::max(s.max_depth, d);
    s.min_depth = std::min(s.min_depth, d);
    for (const auto& n : t.nodes()) {
      if (n.type_id >= 0 && n.type_id < num_types) ++s.type_histogram[static_cast<size_t>(n.type_id)];
    }
  }
  s.mean_nodes = nodes / static_cast<double>(trees.size());
  s.mean_depth = depth / static_cast<double>(trees.size());
  return s;
}

namespace {

struct RawNode {
  int type_id;
  Bounds bounds;
  std::vector<RawNode> children;
};

long long as_coordinate(const json& v, const std::string& path) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_number_float()) return static_cast<long long>(std::llround(v.get<double>()));
  throw ParseError(path + ": expected a number");
}

RawNode parse_raw(const json& j, const std::string& path, long long w, long long h, const TypeManifest& manifest,
                  const IngestOptions& opt, bool is_root) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  RawNode n;
  auto label = j.find("componentLabel");
  std::string name;
  if (label != j.end() && label->is_string()) {
    name = label->get<std::string>();
  } else if (is_root && !opt.root_label.empty()) {
    name = opt.root_label;
  } else if (is_root) {
    name = manifest.name(0);
  } else {
    throw ParseError(path + ".componentLabel: missing");
  }
  auto id = manifest.find(name);
  if (!id) throw ParseError(path + ".componentLabel: unknown category '" + name + "'");
  n.type_id = *id;
  auto b = j.find("bounds");
  if (b == j.end() || !b->is_array() || b->size() != 4) throw ParseError(path + ".bounds: expected an array of 4 numbers");
  std::array<long long, 4> px{};
  for (size_t i = 0; i < 4; ++i) px[i] = as_coordinate((*b)[i], path + ".bounds[" + std::to_string(i) + "]");
  n.bounds = discretize_bounds(px, w, h);  // InvalidBounds propagates as a reject
  auto ch = j.find("children");
  if (ch != j.end() && !ch->is_null()) {
    if (!ch->is_array()) throw ParseError(path + ".children: expected an array");
    for (size_t i = 0; i < ch->size(); ++i) {
      n.children.push_back(
          parse_raw((*ch)[i], path + ".children[" + std::to_string(i) + "]", w, h, manifest, opt, false));
    }
  }
  return n;
}

void order_children(RawNode& n, std::mt19937_64* rng) {
  if (rng) {
    std::shuffle(n.children.begin(), n.children.end(), *rng);
  } else {
    std::stable_sort(n.children.begin(), n.children.end(), [](const RawNode& a, const RawNode& b) {
      return std::tie(a.bounds.y, a.bounds.x) < std::tie(b.bounds.y, b.bounds.x);
    });
  }
  for (auto& c : n.children) order_children(c, rng);
}

void flatten(const RawNode& n, int parent, LayoutTree& out) {
  const int idx = out.add_node(n.type_id, n.children.empty(), n.bounds, parent);
  for (const auto& c : n.children) flatten(c, idx, out);
}

std::uint64_t id_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

LayoutTree parse_layout_document(const std::string& text, const TypeManifest& manifest, const IngestOptions& options) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("document: expected an object");
  auto get_int = [&](const char* key) -> long long {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_number()) throw ParseError(std::string(key) + ": expected a number");
    return it->get<long long>();
  };
  const long long w = get_int("width");
  const long long h = get_int("height");
  std::string id;
  if (auto it = doc.find("id"); it != doc.end() && it->is_string()) id = it->get<std::string>();
  auto root = doc.find("root");
  if (root == doc.end()) throw ParseError("root: missing");
  RawNode raw = parse_raw(*root, "root", w, h, manifest, options, true);
  std::optional<std::mt19937_64> rng;
  if (options.shuffle_children) rng.emplace(options.shuffle_seed ^ id_hash(id));
  order_children(raw, rng ? &*rng : nullptr);
  LayoutTree tree;
  flatten(raw, kNoParent, tree);
  tree.set_source_id(id);
  validate_tree(tree);
  return tree;
}

int IngestResult::total_rejects() const {
  int n = 0;
  for (const auto& [_, c] : rejects) n += c;
  return n;
}

IngestResult ingest_corpus(const std::filesystem::path& directory, const TypeManifest& manifest,
                           const IngestOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) throw std::runtime_error(directory.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(directory)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  IngestResult result;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      LayoutTree t = parse_layout_document(buf.str(), manifest, options);
      if (t.source_id().empty()) t.set_source_id(f.stem().string());
      result.trees.push_back(std::move(t));
    } catch (const ParseError&) {
      ++result.parse_errors;
    } catch (const InvalidBounds&) {
      ++result.rejects[std::string(to_string(ValidationErrorKind::kContainmentViolation))];
    } catch (const ValidationError& e) {
      ++result.rejects[std::string(to_string(e.kind()))];
    }
  }
  std::stable_sort(result.trees.begin(), result.trees.end(),
                   [](const LayoutTree& a, const LayoutTree& b) { return a.source_id() < b.source_id(); });
  if (result.trees.empty()) throw EmptyCorpus("no valid layouts in " + directory.string());
  result.stats = compute_stats(result.trees, manifest.size());
  return result;
}

// ---- grid-unit tree files ---------------------------------------------------

namespace {

json node_json(const LayoutTree& t, int i, const TypeManifest& m, const std::vector<bool>* predicted) {
  const auto& n = t.node(i);
  json j;
  j["type"] = m.name(n.type_id);
  j["bounds"] = {n.bounds.x, n.bounds.y, n.bounds.x2, n.bounds.y2};
  j["terminal"] = n.terminal;
  if (predicted) j["predicted"] = static_cast<bool>((*predicted)[static_cast<size_t>(i)]);
  json kids = json::array();
  for (int c : t.children(i)) kids.push_back(node_json(t, c, m, predicted));
  j["children"] = std::move(kids);
  return j;
}

struct GridNode {
  int type_id;
  bool terminal;
  Bounds bounds;
  std::vector<GridNode> children;
};

GridNode parse_grid(const json& j, const std::string& path, const TypeManifest& m) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  GridNode n{};
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw ParseError(path + ".type: expected a string");
  auto id = m.find(type->get<std::string>());
  if (!id) throw ParseError(path + ".type: unknown type '" + type->get<std::string>() + "'");
  n.type_id = *id;
  auto b = j.find("bounds");
  if (b == j.end() || !b->is_array() || b->size() != 4) throw ParseError(path + ".bounds: expected an array of 4 integers");
  std::array<int, 4> v{};
  for (size_t i = 0; i < 4; ++i) {
    if (!(*b)[i].is_number_integer()) throw ParseError(path + ".bounds[" + std::to_string(i) + "]: expected an integer");
    v[i] = (*b)[i].get<int>();
  }
  n.bounds = Bounds{v[0], v[1], v[2], v[3]};
  auto ch = j.find("children");
  if (ch != j.end() && !ch->is_null()) {
    if (!ch->is_array()) throw ParseError(path + ".children: expected an array");
    for (size_t i = 0; i < ch->size(); ++i) {
      n.children.push_back(parse_grid((*ch)[i], path + ".children[" + std::to_string(i) + "]", m));
    }
  }
  auto term = j.find("terminal");
  if (term != j.end()) {
    if (!term->is_boolean()) throw ParseError(path + ".terminal: expected a boolean");
    n.terminal = term->get<bool>();
  } else {
    n.terminal = n.children.empty();
  }
  return n;
}

void sort_grid(GridNode& n) {
  std::stable_sort(n.children.begin(), n.children.end(), [](const GridNode& a, const GridNode& b) {
    return std::tie(a.bounds.y, a.bounds.x) < std::tie(b.bounds.y, b.bounds.x);
  });
  for (auto& c : n.children) sort_grid(c);
}

void flatten_grid(const GridNode& n, int parent, LayoutTree& out) {
  const int idx = out.add_node(n.type_id, n.terminal, n.bounds, parent);
  for (const auto& c : n.children) flatten_grid(c, idx, out);
}

LayoutTree tree_from_node_json(const json& root, const TypeManifest& m, bool sort_children) {
  GridNode g = parse_grid(root, "root", m);
  if (sort_children) sort_grid(g);
  LayoutTree t;
  flatten_grid(g, kNoParent, t);
  return t;
}

}  // namespace

std::string tree_to_json(const LayoutTree& tree, const TypeManifest& manifest, const std::vector<bool>* predicted) {
  return node_json(tree, 0, manifest, predicted).dump();
}

LayoutTree tree_from_json(const std::string& text, const TypeManifest& manifest, bool sort_children) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return tree_from_node_json(j, manifest, sort_children);
}

void save_corpus(const std::filesystem::path& path, const std::vector<LayoutTree>& trees, const TypeManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : trees) {
    json line;
    line["id"] = t.source_id();
    line["root"] = node_json(t, 0, manifest, nullptr);
    out << line.dump() << '\n';
  }
}

std::vector<LayoutTree> load_corpus(const std::filesystem::path& path, const TypeManifest& manifest) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  std::vector<LayoutTree> trees;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    LayoutTree t = tree_from_node_json(j.at("root"), manifest, false);
    t.set_source_id(j.value("id", std::to_string(lineno)));
    validate_tree(t);
    trees.push_back(std::move(t));
  }
  return trees;
}

}  // namespace layoutcomp
