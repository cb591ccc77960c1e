#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "core/error.hpp"
#include "core/vision.hpp"
#include "support/gradcheck.hpp"

using namespace nvlm;
using nvlm::testing::check_gradient;
using nvlm::testing::random_tensor;

namespace {

Image pattern_tile(int size, int channels, std::uint32_t salt = 1) {
  Image img(size, size, channels);
  std::uint32_t s = salt;
  for (double& p : img.pixels) {
    s = s * 1664525u + 1013904223u;
    p = static_cast<double>(s % 256u);
  }
  return img;
}

TokenBlock random_block(int gh, int gw, int ch, std::uint64_t seed) {
  Rng rng(seed);
  TokenBlock b;
  b.grid_h = gh;
  b.grid_w = gw;
  b.channels = ch;
  b.source = 0;
  b.data = nvlm::testing::random_tensor({gh * gw, ch}, rng);
  return b;
}

}  // namespace

TEST_CASE("param store basics") {
  ParamStore ps;
  Tensor& w = ps.create("a.w", {2, 3});
  CHECK(w.numel() == 6);
  CHECK(ps.trainable("a.w"));
  CHECK_THROWS_AS(ps.create("a.w", {2, 3}), Error);
  CHECK_THROWS_AS(ps.get("missing"), Error);

  ps.create("a.b", {3}, false);
  CHECK_FALSE(ps.trainable("a.b"));
  CHECK_FALSE(ps.get("a.b").requires_grad);

  ps.create("z.w", {1});
  ps.set_trainable_prefix("a.", false);
  CHECK_FALSE(ps.trainable("a.w"));
  CHECK(ps.trainable("z.w"));
  CHECK_THROWS_AS(ps.set_trainable_prefix("nope.", true), Error);

  CHECK(ps.names() == std::vector<std::string>{"a.b", "a.w", "z.w"});
  CHECK(ps.names_with_prefix("a.") == std::vector<std::string>{"a.b", "a.w"});
  CHECK(ps.scalar_count() == 10);
}

TEST_CASE("param init is creation-order independent") {
  ParamStore first;
  first.create_normal("x", {4, 4}, 0.02, 11);
  first.create_normal("y", {4, 4}, 0.02, 11);
  ParamStore second;
  second.create_normal("y", {4, 4}, 0.02, 11);
  second.create_normal("x", {4, 4}, 0.02, 11);
  CHECK(first.hash() == second.hash());
  CHECK(first.hash("x") == second.hash("x"));
  ParamStore other_seed;
  other_seed.create_normal("x", {4, 4}, 0.02, 12);
  CHECK(first.hash("x") != other_seed.hash("x"));
}

TEST_CASE("param hash tracks values") {
  ParamStore ps;
  ps.create_normal("w", {3, 3}, 1.0, 5);
  std::uint64_t before = ps.hash();
  ps.get("w")[4] += 1e-12;
  CHECK(ps.hash() != before);
}

TEST_CASE("checkpoint round trip is bitwise") {
  ParamStore ps;
  ps.create_normal("enc.w", {5, 7}, 0.5, 3, false);
  ps.create_normal("head.w", {7, 11}, 0.02, 3, true);
  ps.create_full("head.b", {11}, 0.25);
  std::string path = "test_params.ckpt";
  ps.save(path);
  ParamStore back = ParamStore::load(path);
  CHECK(back.hash() == ps.hash());
  CHECK(back.names() == ps.names());
  CHECK_FALSE(back.trainable("enc.w"));
  CHECK(back.trainable("head.w"));
  CHECK(back.get("enc.w").shape() == std::vector<int>{5, 7});
  std::remove(path.c_str());
  CHECK_THROWS_AS(ParamStore::load("missing.ckpt"), Error);
}

TEST_CASE("encoder config validation") {
  EncoderConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.patch_size = 7;
  CHECK_THROWS_AS(cfg.validate(), Error);  // 32 % 7 != 0
  cfg = EncoderConfig{};
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);  // 16 % 3 != 0
  cfg = EncoderConfig{};
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("encode_tile shapes and determinism") {
  EncoderConfig cfg;
  ParamStore ps;
  VisionEncoder enc(cfg, ps);

  SUBCASE("toy config gives a 4x4 grid of embed-dim tokens") {
    TokenBlock b = enc.encode(pattern_tile(32, 1), 2);
    CHECK(b.grid_h == 4);
    CHECK(b.grid_w == 4);
    CHECK(b.token_count() == 16);
    CHECK(b.channels == 16);
    CHECK(b.source == 2);
    CHECK(b.data.shape() == std::vector<int>{16, 16});
  }
  SUBCASE("identical tiles encode identically") {
    Image tile = pattern_tile(32, 1);
    TokenBlock a = enc.encode(tile, 0);
    TokenBlock b = enc.encode(tile, 1);
    for (std::int64_t i = 0; i < a.data.numel(); ++i) CHECK(a.data[i] == b.data[i]);
  }
  SUBCASE("different tiles encode differently") {
    TokenBlock a = enc.encode(pattern_tile(32, 1, 1), 0);
    TokenBlock b = enc.encode(pattern_tile(32, 1, 2), 0);
    bool any_diff = false;
    for (std::int64_t i = 0; i < a.data.numel(); ++i) any_diff |= a.data[i] != b.data[i];
    CHECK(any_diff);
  }
  SUBCASE("wrong tile size or channels is rejected") {
    CHECK_THROWS_AS(enc.encode(pattern_tile(31, 1), 0), Error);
    CHECK_THROWS_AS(enc.encode(pattern_tile(32, 3), 0), Error);
  }
  SUBCASE("all encoder parameters are frozen") {
    for (const std::string& name : ps.names_with_prefix("vision.")) {
      CHECK_FALSE(ps.trainable(name));
      CHECK_FALSE(ps.get(name).requires_grad);
    }
  }
}

TEST_CASE("encoders built in separate stores agree") {
  EncoderConfig cfg;
  ParamStore a_store, b_store;
  VisionEncoder a(cfg, a_store), b(cfg, b_store);
  Image tile = pattern_tile(32, 1, 9);
  TokenBlock ba = a.encode(tile, 0);
  TokenBlock bb = b.encode(tile, 0);
  for (std::int64_t i = 0; i < ba.data.numel(); ++i) CHECK(ba.data[i] == bb.data[i]);
}

TEST_CASE("grid scales with tile and patch size") {
  EncoderConfig cfg;
  cfg.tile_size = 64;
  cfg.patch_size = 8;
  ParamStore ps;
  VisionEncoder enc(cfg, ps);
  TokenBlock b = enc.encode(pattern_tile(64, 1), 0);
  CHECK(b.grid_h == 8);
  CHECK(b.token_count() == 64);
}

TEST_CASE("pixel shuffle") {
  SUBCASE("minimal 2x2 single-channel case fixes the order") {
    TokenBlock b;
    b.grid_h = b.grid_w = 2;
    b.channels = 1;
    b.data = Tensor({4, 1}, {10.0, 11.0, 12.0, 13.0});  // TL, TR, BL, BR
    TokenBlock s = pixel_shuffle(b);
    CHECK(s.grid_h == 1);
    CHECK(s.grid_w == 1);
    CHECK(s.channels == 4);
    CHECK(s.data.data()[0] == 10.0);
    CHECK(s.data.data()[1] == 11.0);
    CHECK(s.data.data()[2] == 12.0);
    CHECK(s.data.data()[3] == 13.0);
  }
  SUBCASE("full-scale shape arithmetic") {
    TokenBlock b = random_block(32, 32, 3200, 42);
    TokenBlock s = pixel_shuffle(b);
    CHECK(s.grid_h == 16);
    CHECK(s.grid_w == 16);
    CHECK(s.channels == 12800);
    CHECK(s.token_count() == 256);
    CHECK(b.token_count() == 1024);
  }
  SUBCASE("round trip is bitwise") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      int gh = 2 * rng.next_int(1, 6);
      int gw = 2 * rng.next_int(1, 6);
      int ch = rng.next_int(1, 8);
      TokenBlock b = random_block(gh, gw, ch, 100 + static_cast<std::uint64_t>(trial));
      TokenBlock back = pixel_unshuffle(pixel_shuffle(b));
      REQUIRE(back.data.numel() == b.data.numel());
      for (std::int64_t i = 0; i < b.data.numel(); ++i) CHECK(back.data[i] == b.data[i]);
    }
  }
  SUBCASE("neighborhood grouping matches direct lookup") {
    TokenBlock b = random_block(4, 6, 3, 55);
    TokenBlock s = pixel_shuffle(b);
    for (int r = 0; r < s.grid_h; ++r)
      for (int c = 0; c < s.grid_w; ++c) {
        int row = r * s.grid_w + c;
        int slot = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int src = (2 * r + dy) * b.grid_w + (2 * c + dx);
            for (int ch = 0; ch < 3; ++ch)
              CHECK(s.data.at(row, 3 * slot + ch) == b.data.at(src, ch));
            ++slot;
          }
      }
  }
  SUBCASE("odd grid is rejected") {
    TokenBlock b = random_block(3, 4, 2, 1);
    CHECK_THROWS_AS(pixel_shuffle(b), Error);
    TokenBlock c = random_block(2, 2, 3, 1);
    CHECK_THROWS_AS(pixel_unshuffle(c), Error);  // 3 % 4 != 0
  }
}

TEST_CASE("project_d") {
  SUBCASE("zero parameters give zero output in the target width") {
    Graph g;
    Rng rng(1);
    NodeId x = g.leaf(random_tensor({4, 16}, rng));
    ProjectorD p{g.leaf(Tensor::zeros({16, 24})), g.leaf(Tensor::zeros({24})),
                 g.leaf(Tensor::zeros({24, 8})), g.leaf(Tensor::zeros({8}))};
    NodeId y = project_d(g, x, p);
    CHECK(g.value(y).shape() == std::vector<int>{4, 8});
    for (double v : g.value(y).data()) CHECK(v == 0.0);
  }
  SUBCASE("width mismatch is a shape error") {
    Graph g;
    Rng rng(1);
    NodeId x = g.leaf(random_tensor({4, 10}, rng));
    ProjectorD p{g.leaf(Tensor::zeros({16, 24})), g.leaf(Tensor::zeros({24})),
                 g.leaf(Tensor::zeros({24, 8})), g.leaf(Tensor::zeros({8}))};
    CHECK_THROWS_AS(project_d(g, x, p), Error);
  }
}

TEST_CASE("project_d gradient check") {
  Rng rng(3);
  Tensor x = random_tensor({4, 16}, rng, 0.5);
  Tensor w1 = random_tensor({16, 24}, rng, 0.2);
  Tensor b1 = random_tensor({24}, rng, 0.2);
  Tensor w2 = random_tensor({24, 8}, rng, 0.2);
  Tensor b2 = random_tensor({8}, rng, 0.2);
  Tensor probe = random_tensor({4, 8}, rng, 1.0);
  w1.requires_grad = b1.requires_grad = w2.requires_grad = b2.requires_grad = true;

  auto loss_value = [&]() {
    Graph g;
    ProjectorD p{g.leaf(w1), g.leaf(b1), g.leaf(w2), g.leaf(b2)};
    NodeId y = project_d(g, g.leaf(x), p);
    return g.value(g.sum(g.mul(y, g.leaf(probe)))).data()[0];
  };

  Graph g;
  ProjectorD p{g.leaf(w1), g.leaf(b1), g.leaf(w2), g.leaf(b2)};
  NodeId y = project_d(g, g.leaf(x), p);
  CHECK(g.value(y).rows() == 4);  // token count preserved
  g.backward(g.sum(g.mul(y, g.leaf(probe))));

  auto res1 = check_gradient(w1, g.grad(p.w1), loss_value);
  CHECK(res1.max_rel_err < 1e-3);
  auto res2 = check_gradient(b1, g.grad(p.b1), loss_value);
  CHECK(res2.max_rel_err < 1e-3);
  auto res3 = check_gradient(w2, g.grad(p.w2), loss_value);
  CHECK(res3.max_rel_err < 1e-3);
  auto res4 = check_gradient(b2, g.grad(p.b2), loss_value);
  CHECK(res4.max_rel_err < 1e-3);
}

TEST_CASE("project_x") {
  SUBCASE("identity weights return the input bitwise") {
    Graph g;
    Rng rng(5);
    Tensor x = random_tensor({6, 8}, rng);
    Tensor eye = Tensor::zeros({8, 8});
    for (int i = 0; i < 8; ++i) eye.at(i, i) = 1.0;
    NodeId y = project_x(g, g.leaf(x), {g.leaf(eye), g.leaf(Tensor::zeros({8}))});
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(g.value(y)[i] == x[i]);
  }
  SUBCASE("toy shape 16 to 8") {
    Graph g;
    Rng rng(5);
    NodeId y = project_x(g, g.leaf(random_tensor({4, 16}, rng)),
                         {g.leaf(random_tensor({16, 8}, rng)), g.leaf(Tensor::zeros({8}))});
    CHECK(g.value(y).shape() == std::vector<int>{4, 8});
  }
  SUBCASE("gradients match finite differences") {
    Rng rng(6);
    Tensor x = random_tensor({5, 16}, rng, 0.5);
    Tensor w = random_tensor({16, 8}, rng, 0.2);
    Tensor b = random_tensor({8}, rng, 0.2);
    Tensor probe = random_tensor({5, 8}, rng);
    w.requires_grad = b.requires_grad = true;

    auto loss_value = [&]() {
      Graph g;
      NodeId y = project_x(g, g.leaf(x), {g.leaf(w), g.leaf(b)});
      return g.value(g.sum(g.mul(y, g.leaf(probe)))).data()[0];
    };
    Graph g;
    ProjectorX p{g.leaf(w), g.leaf(b)};
    g.backward(g.sum(g.mul(project_x(g, g.leaf(x), p), g.leaf(probe))));
    CHECK(check_gradient(w, g.grad(p.w), loss_value).max_rel_err < 1e-3);
    CHECK(check_gradient(b, g.grad(p.b), loss_value).max_rel_err < 1e-3);
  }
}

TEST_CASE("shuffled encoder output feeds the projectors") {
  EncoderConfig cfg;
  ParamStore ps;
  VisionEncoder enc(cfg, ps);
  TokenBlock shuffled = pixel_shuffle(enc.encode(pattern_tile(32, 1), 0));
  CHECK(shuffled.token_count() == 4);
  CHECK(shuffled.channels == 64);

  Graph g;
  Rng rng(8);
  ProjectorD pd{g.leaf(random_tensor({64, 48}, rng, 0.1)), g.leaf(Tensor::zeros({48})),
                g.leaf(random_tensor({48, 32}, rng, 0.1)), g.leaf(Tensor::zeros({32}))};
  NodeId d = project_d(g, g.leaf(shuffled.data), pd);
  CHECK(g.value(d).shape() == std::vector<int>{4, 32});

  ProjectorX px{g.leaf(random_tensor({64, 32}, rng, 0.1)), g.leaf(Tensor::zeros({32}))};
  NodeId xo = project_x(g, g.leaf(shuffled.data), px);
  CHECK(g.value(xo).shape() == std::vector<int>{4, 32});
}
