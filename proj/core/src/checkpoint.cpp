#include "layoutcomp/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace layoutcomp {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "LAYOUTCOMP-CHECKPOINT";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32(const std::string& in, size_t pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checkpoint_hash(const std::string& path) { return hex(fnv1a64(read_file(path))); }

void save_checkpoint(const std::string& path, const DecoderModel<float>& model, const ad::AdamState<float>* adam,
                     const std::string& meta_json) {
  const auto& params = model.params();
  json header;
  header["config"] = json::parse(model.config().to_json());
  json table = json::array();
  for (size_t i = 0; i < params.size(); ++i) table.push_back({{"name", params[i].name}, {"shape", params[i].value.shape}});
  header["tensors"] = table;
  if (adam) {
    if (adam->m.size() != params.size() || adam->v.size() != params.size()) {
      throw CheckpointError("optimizer state does not match the model parameters");
    }
    header["adam"] = {{"step", adam->step}};
  }
  header["meta"] = json::parse(meta_json);

  std::string body;
  auto put_all = [&](const std::vector<float>& data) {
    for (float v : data) put_f32(body, v);
  };
  for (size_t i = 0; i < params.size(); ++i) put_all(params[i].value.data);
  if (adam) {
    for (size_t i = 0; i < params.size(); ++i) {
      if (adam->m[i].size() != params[i].value.numel() || adam->v[i].size() != params[i].value.numel()) {
        throw CheckpointError("optimizer state does not match parameter " + params[i].name);
      }
      put_all(adam->m[i]);
      put_all(adam->v[i]);
    }
  }
  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << kMagic << '\n' << "version " << kCheckpointVersion << '\n' << head.size() << '\n' << head << body;
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  size_t pos = 0;
  auto line = [&]() {
    const size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError("truncated checkpoint header");
    std::string s = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return s;
  };
  if (line() != kMagic) throw CheckpointError("not a checkpoint file: bad magic");
  const std::string ver = line();
  if (ver != "version " + std::to_string(kCheckpointVersion)) {
    throw CheckpointError("unsupported checkpoint " + ver + " (expected version " + std::to_string(kCheckpointVersion) + ")");
  }
  size_t head_len = 0;
  try {
    head_len = std::stoul(line());
  } catch (const std::exception&) {
    throw CheckpointError("bad checkpoint header length");
  }
  if (pos + head_len > bytes.size()) throw CheckpointError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, head_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += head_len;

  Checkpoint ck;
  try {
    ck.model = std::make_unique<DecoderModel<float>>(ModelConfig::from_json(header.at("config").dump()));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  auto& params = ck.model->params();
  const json& table = header.value("tensors", json::array());
  if (!table.is_array() || table.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(table.is_array() ? table.size() : 0) +
                          " tensors, the config needs " + std::to_string(params.size()));
  }
  std::vector<ad::Parameter<float>*> order;
  for (const auto& entry : table) {
    const std::string name = entry.value("name", "");
    if (!params.contains(name)) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    auto& p = params.get(name);
    std::vector<int> shape;
    try {
      shape = entry.at("shape").get<std::vector<int>>();
    } catch (const json::exception&) {
      throw CheckpointError("tensor '" + name + "' has no valid shape");
    }
    if (shape != p.value.shape) throw CheckpointError("tensor '" + name + "' has the wrong shape for this config");
    for (auto* seen : order) {
      if (seen == &p) throw CheckpointError("tensor '" + name + "' appears twice");
    }
    order.push_back(&p);
  }
  const bool has_adam = header.contains("adam");
  size_t need = 0;
  for (auto* p : order) need += p->value.numel() * (has_adam ? 3 : 1);
  if (bytes.size() - pos != need * 4) {
    throw CheckpointError("checkpoint data is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(need * 4));
  }
  auto take = [&](std::vector<float>& dst) {
    for (auto& v : dst) {
      v = get_f32(bytes, pos);
      pos += 4;
    }
  };
  for (auto* p : order) take(p->value.data);
  if (has_adam) {
    ad::AdamState<float> st;
    st.step = header["adam"].value("step", std::int64_t{0});
    st.m.resize(params.size());
    st.v.resize(params.size());
    std::vector<size_t> slot;
    for (auto* p : order) {
      for (size_t i = 0; i < params.size(); ++i) {
        if (&params[i] == p) slot.push_back(i);
      }
    }
    for (size_t k = 0; k < order.size(); ++k) {
      auto& m = st.m[slot[k]];
      auto& v = st.v[slot[k]];
      m.resize(order[k]->value.numel());
      v.resize(order[k]->value.numel());
      take(m);
      take(v);
    }
    ck.adam = std::move(st);
  }
  for (auto* p : order) {
    for (float v : p->value.data) {
      if (!std::isfinite(v)) throw CheckpointError("tensor '" + p->name + "' holds non-finite values");
    }
  }
  ck.meta_json = header.value("meta", json::object()).dump();
  ck.hash = hex(fnv1a64(bytes));
  return ck;
}

}  // namespace layoutcomp
