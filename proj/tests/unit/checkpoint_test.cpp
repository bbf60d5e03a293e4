#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include "layoutcomp/checkpoint.hpp"

using namespace layoutcomp;
namespace fs = std::filesystem;

namespace {

ModelConfig cfg(Variant v = Variant::kPointer) {
  ModelConfig c;
  c.variant = v;
  c.embed = c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 32;
  c.seed = 21;
  return c;
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  static void dump(const std::string& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  // Splits a checkpoint into (preamble lines, header json, body).
  static std::tuple<std::string, nlohmann::json, std::string> split(const std::string& bytes) {
    size_t a = bytes.find('\n');
    size_t b = bytes.find('\n', a + 1);
    size_t c = bytes.find('\n', b + 1);
    const size_t len = std::stoul(bytes.substr(b + 1, c - b - 1));
    return {bytes.substr(0, b + 1), nlohmann::json::parse(bytes.substr(c + 1, len)), bytes.substr(c + 1 + len)};
  }
  static std::string join(const std::string& pre, const nlohmann::json& header, const std::string& body) {
    const auto h = header.dump();
    return pre + std::to_string(h.size()) + "\n" + h + body;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CheckpointFile, RoundTripIsBitwise) {
  for (Variant v : {Variant::kVanilla, Variant::kPointer, Variant::kRecursive}) {
    DecoderModel<float> m(cfg(v));
    save_checkpoint(path("m.ckpt"), m, nullptr, R"({"step": 7})");
    auto ck = load_checkpoint(path("m.ckpt"));
    EXPECT_EQ(ck.model->config().variant, v);
    EXPECT_FALSE(ck.adam.has_value());
    EXPECT_EQ(nlohmann::json::parse(ck.meta_json)["step"], 7);
    ASSERT_EQ(ck.model->params().size(), m.params().size());
    for (size_t i = 0; i < m.params().size(); ++i) {
      EXPECT_EQ(ck.model->params()[i].name, m.params()[i].name);
      EXPECT_EQ(ck.model->params()[i].value.data, m.params()[i].value.data);
    }
  }
}

TEST_F(CheckpointFile, OptimizerStateRoundTrip) {
  DecoderModel<float> m(cfg());
  ad::AdamState<float> st;
  st.init(m.params().pointers());
  st.step = 42;
  for (size_t i = 0; i < st.m.size(); ++i) {
    for (size_t j = 0; j < st.m[i].size(); ++j) {
      st.m[i][j] = static_cast<float>(i) + 0.25f * static_cast<float>(j % 7);
      st.v[i][j] = 1.0f / static_cast<float>(j + 1);
    }
  }
  save_checkpoint(path("a.ckpt"), m, &st);
  auto ck = load_checkpoint(path("a.ckpt"));
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->step, 42);
  EXPECT_EQ(ck.adam->m, st.m);
  EXPECT_EQ(ck.adam->v, st.v);
}

TEST_F(CheckpointFile, BlobsAreLittleEndianF32InTableOrder) {
  DecoderModel<float> m(cfg());
  save_checkpoint(path("m.ckpt"), m);
  auto [pre, header, body] = split(slurp(path("m.ckpt")));
  EXPECT_EQ(pre, "LAYOUTCOMP-CHECKPOINT\nversion 1\n");
  EXPECT_EQ(header["tensors"][0]["name"], m.params()[0].name);
  const float first = m.params()[0].value.data[0];
  const auto bits = std::bit_cast<std::uint32_t>(first);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(static_cast<unsigned char>(body[static_cast<size_t>(i)]), (bits >> (8 * i)) & 0xFFu);
  EXPECT_EQ(body.size(), m.params().num_values() * 4);
}

TEST_F(CheckpointFile, HashIsStableAndContentSensitive) {
  DecoderModel<float> m(cfg());
  save_checkpoint(path("a.ckpt"), m);
  save_checkpoint(path("b.ckpt"), m);
  EXPECT_EQ(checkpoint_hash(path("a.ckpt")), checkpoint_hash(path("b.ckpt")));
  EXPECT_EQ(load_checkpoint(path("a.ckpt")).hash, checkpoint_hash(path("a.ckpt")));
  EXPECT_EQ(checkpoint_hash(path("a.ckpt")).size(), 16u);
  m.params()[0].value.data[0] += 1.0f;
  save_checkpoint(path("c.ckpt"), m);
  EXPECT_NE(checkpoint_hash(path("a.ckpt")), checkpoint_hash(path("c.ckpt")));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST_F(CheckpointFile, RejectsCorruption) {
  DecoderModel<float> m(cfg());
  save_checkpoint(path("m.ckpt"), m);
  const std::string good = slurp(path("m.ckpt"));
  auto expect_reject = [&](const std::string& bytes, const std::string& what) {
    dump(path("bad.ckpt"), bytes);
    try {
      load_checkpoint(path("bad.ckpt"));
      ADD_FAILURE() << "accepted: " << what;
    } catch (const CheckpointError& e) {
      SUCCEED() << e.what();
    }
  };
  expect_reject("XX" + good.substr(2), "bad magic");
  {
    auto bytes = good;
    bytes.replace(bytes.find("version 1"), 9, "version 9");
    expect_reject(bytes, "future version");
  }
  expect_reject(good.substr(0, good.size() - 3), "truncated body");
  expect_reject(good + "x", "trailing bytes");
  expect_reject(good.substr(0, 40), "truncated header");

  auto [pre, header, body] = split(good);
  {
    auto h = header;
    h["tensors"][1]["shape"] = {1, 1};
    expect_reject(join(pre, h, body), "wrong shape");
  }
  {
    auto h = header;
    h["tensors"][2]["name"] = "embed.z";
    expect_reject(join(pre, h, body), "unknown name");
  }
  {
    auto h = header;
    h["tensors"].erase(h["tensors"].size() - 1);
    expect_reject(join(pre, h, body), "missing tensor");
  }
  {
    auto h = header;
    h["config"]["hidden"] = 32;
    h["config"]["embed"] = 32;
    expect_reject(join(pre, h, body), "config does not match tensors");
  }
  {
    auto b = body;
    const auto nan = std::bit_cast<std::uint32_t>(std::nanf(""));
    for (int i = 0; i < 4; ++i) b[static_cast<size_t>(i)] = static_cast<char>((nan >> (8 * i)) & 0xFFu);
    expect_reject(join(pre, header, b), "non-finite");
  }
  EXPECT_THROW(load_checkpoint(path("absent.ckpt")), CheckpointError);
}
