#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "kws/cenet.hpp"
#include "kws/checkpoint.hpp"
#include "kws/kv_config.hpp"

using namespace kws;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  auto dir = fs::temp_directory_path() / "kws_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("records round trip exactly") {
  std::vector<NamedArray> recs{{"a", {2, 3}, {1, 2, 3, 4, 5, 6.5f}}, {"b.c", {1}, {-0.0f}}};
  write_checkpoint(tmp("r.bin"), recs);
  auto back = read_checkpoint(tmp("r.bin"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].shape == Shape{2, 3});
  CHECK(back[0].values == recs[0].values);
  CHECK(back[1].name == "b.c");
}

TEST_CASE("header layout") {
  write_checkpoint(tmp("h.bin"), {{"x", {1}, {1.0f}}});
  const auto bytes = slurp(tmp("h.bin"));
  REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 1 + 4 + 4 + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KWSC");
  CHECK(bytes[4] == static_cast<char>(kCheckpointVersion));
}

TEST_CASE("corruption is reported") {
  write_checkpoint(tmp("c.bin"), {{"x", {4}, {1, 2, 3, 4}}});
  auto bytes = slurp(tmp("c.bin"));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  dump(tmp("magic.bin"), bad_magic);
  CHECK_THROWS_WITH_AS(read_checkpoint(tmp("magic.bin")), doctest::Contains("magic"), std::runtime_error);
  auto bad_version = bytes;
  bad_version[4] = 9;
  dump(tmp("version.bin"), bad_version);
  CHECK_THROWS_WITH_AS(read_checkpoint(tmp("version.bin")), doctest::Contains("version"), std::runtime_error);
  dump(tmp("trunc.bin"), std::vector<char>(bytes.begin(), bytes.end() - 3));
  CHECK_THROWS_WITH_AS(read_checkpoint(tmp("trunc.bin")), doctest::Contains("trunc"), std::runtime_error);
  CHECK_THROWS(read_checkpoint(tmp("missing.bin")));
}

TEST_CASE("model save and load reproduces infer outputs bit for bit") {
  auto model = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6, {2}), 3);
  model.stage(2).gcn->gamma().mutable_data()[0] = 0.25f;
  // Move BN statistics off their initial values.
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  std::vector<float> v(4 * 101 * 40);
  for (auto& x : v) x = n(rng);
  auto x = Tensor<float>::from({4, 1, 101, 40}, v);
  model.forward(x, Mode::train);
  const auto before = model.forward(x, Mode::infer);
  save_model(model, tmp("m.ckpt"));
  CHECK(fs::exists(config_path_for(tmp("m.ckpt"))));
  auto loaded = load_model(tmp("m.ckpt"));
  CHECK(loaded.config().gcn_stages == std::set<int>{2});
  const auto after = loaded.forward(x, Mode::infer);
  CHECK(std::equal(before.data().begin(), before.data().end(), after.data().begin()));
}

TEST_CASE("loading into a different architecture fails clearly") {
  auto small = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6), 1);
  auto other = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6, {1}), 1);
  CHECK_THROWS_WITH(other.load_state(small.state()), doctest::Contains("missing"));
}

TEST_CASE("key-value files") {
  auto kv = KeyValues::parse("# comment\n a = 1 \nb=two words\n\nc = 2.5\na = 3\n");
  CHECK(kv.get_int("a", 0) == 3);
  CHECK(kv.get_string("b", "") == "two words");
  CHECK(kv.get_double("c", 0) == 2.5);
  CHECK(kv.get_double("missing", 7) == 7);
  CHECK_THROWS(kv.get_int("b", 0));
  CHECK_THROWS(KeyValues::parse("no equals sign"));
  kv.save(tmp("kv.cfg"));
  CHECK(KeyValues::load(tmp("kv.cfg")).to_string() == kv.to_string());
  KeyValues over;
  over.set("a", "9");
  kv.merge(over);
  CHECK(kv.get_int("a", 0) == 9);
}
