#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "ingraph/checkpoint.hpp"
#include "ingraph/graph_block.hpp"
#include "oracles.hpp"

using namespace ingraph;

namespace {

InGraphParams make_params(const InGraphConfig& cfg, std::uint64_t seed,
                          const std::string& instance = "t") {
  Rng rng(seed);
  return InGraphParams(instance, cfg, rng);
}

TargetFeature random_target(TargetKind kind, std::size_t h, std::size_t w,
                            std::size_t d, Rng& rng) {
  return {kind, oracle::random_tensor({h, w, d}, rng, -1.0, 1.0, false)};
}

oracle::ProjectionOracle project_oracle(const TargetFeature& x1,
                                        const TargetFeature& x2,
                                        const InGraphParams& p) {
  const std::size_t h = x1.map.dim(0), w = x1.map.dim(1), d = x1.map.dim(2);
  return oracle::eq1_project(
      x1.map.values(), x2.map.values(), h, w, d, p.cfg.reduced_dim,
      p.cfg.node_count, p.phi1.weight.tensor.values(), p.phi1.bias.tensor.values(),
      p.phi2.weight.tensor.values(), p.phi2.bias.tensor.values(),
      p.theta1.weight.tensor.values(), p.theta1.bias.tensor.values(),
      p.theta2.weight.tensor.values(), p.theta2.bias.tensor.values());
}

}  // namespace

TEST_CASE("project shape contract") {
  InGraphParams p = make_params({4, 2, 3}, 1);
  Rng rng(2);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  const ProjectionState st = project(x1, x2, p);
  CHECK(st.L == 4);
  CHECK(st.X_r.shape() == Shape{4, 4});
  CHECK(st.B.shape() == Shape{6, 4});
  CHECK(st.V.shape() == Shape{6, 4});
}

TEST_CASE("project rejects mismatched targets") {
  InGraphParams p = make_params({4, 2, 3}, 1);
  Rng rng(2);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 3, 4, rng);
  CHECK_THROWS_AS(project(x1, x2, p), ShapeError);
  const TargetFeature x3 = random_target(TargetKind::scene, 2, 2, 5, rng);
  CHECK_THROWS_AS(project(x1, x3, p), ShapeError);
}

TEST_CASE("one-hot projection weights select single converted rows") {
  // D == L so each location can carry an indicator channel.
  const InGraphConfig cfg{4, 2, 2};
  InGraphParams p = make_params(cfg, 3);

  // x1[h,w,d] = 1 iff d == flat location index; x2 = 0.
  Tensor x1map({2, 2, 4}, 0.0);
  for (std::size_t l = 0; l < 4; ++l) x1map.mutable_values()[l * 4 + l] = 1.0;
  const TargetFeature x1{TargetKind::human, x1map};
  const TargetFeature x2{TargetKind::scene, Tensor({2, 2, 4}, 0.0)};

  // theta1 weight picks location 2 for node 0 and location 1 for node 1.
  auto& tw = p.theta1.weight.tensor.mutable_values();
  std::fill(tw.begin(), tw.end(), 0.0);
  const std::size_t target_loc[2] = {2, 1};
  for (std::size_t n = 0; n < 2; ++n) tw[target_loc[n] * 2 + n] = 1.0;
  std::fill(p.theta1.bias.tensor.mutable_values().begin(),
            p.theta1.bias.tensor.mutable_values().end(), 0.0);
  std::fill(p.theta2.weight.tensor.mutable_values().begin(),
            p.theta2.weight.tensor.mutable_values().end(), 0.0);
  std::fill(p.theta2.bias.tensor.mutable_values().begin(),
            p.theta2.bias.tensor.mutable_values().end(), 0.0);

  const ProjectionState st = project(x1, x2, p);
  const std::size_t c2 = 2 * cfg.reduced_dim;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < c2; ++c)
      CHECK(st.V.values()[n * c2 + c] == st.X_r.values()[target_loc[n] * c2 + c]);
  for (std::size_t n = 2; n < 4; ++n)  // zeroed second target: empty rows
    for (std::size_t c = 0; c < c2; ++c)
      CHECK(st.V.values()[n * c2 + c] == 0.0);
}

TEST_CASE("projection matches the linear-combination oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
    const InGraphConfig cfg{1 + rng.index(6), 1 + rng.index(4), 1 + rng.index(4)};
    InGraphParams p = make_params(cfg, 100 + static_cast<std::uint64_t>(trial));
    const TargetFeature x1 =
        random_target(TargetKind::human, h, w, cfg.feature_dim, rng);
    const TargetFeature x2 =
        random_target(TargetKind::scene, h, w, cfg.feature_dim, rng);
    const ProjectionState st = project(x1, x2, p);
    const auto o = project_oracle(x1, x2, p);
    REQUIRE(st.V.numel() == o.v.size());
    for (std::size_t i = 0; i < o.v.size(); ++i)
      CHECK(std::fabs(st.V.values()[i] - o.v[i]) <= 1e-10);
    for (std::size_t i = 0; i < o.b.size(); ++i)
      CHECK(std::fabs(st.B.values()[i] - o.b[i]) <= 1e-10);
    for (std::size_t i = 0; i < o.xr.size(); ++i)
      CHECK(std::fabs(st.X_r.values()[i] - o.xr[i]) <= 1e-10);
  }
}

TEST_CASE("message passing: zero adjacency is the identity, exactly") {
  InGraphParams p = make_params({4, 2, 3}, 7);
  Rng rng(8);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  const ProjectionState st = project(x1, x2, p);
  const Tensor vp = message_pass(st, p);  // adjacency starts at zero
  CHECK(vp.values() == st.V.values());
}

TEST_CASE("message passing: identity adjacency doubles nodes, exactly") {
  InGraphParams p = make_params({4, 2, 3}, 9);
  Rng rng(10);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  const ProjectionState st = project(x1, x2, p);
  auto& a = p.adjacency.tensor.mutable_values();
  const std::size_t n2 = 2 * p.cfg.node_count;
  for (std::size_t i = 0; i < n2; ++i) a[i * n2 + i] = 1.0;
  const Tensor vp = message_pass(st, p);
  for (std::size_t i = 0; i < st.V.numel(); ++i)
    CHECK(vp.values()[i] == 2.0 * st.V.values()[i]);
}

TEST_CASE("message passing matches the loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const InGraphConfig cfg{1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(4)};
    InGraphParams p = make_params(cfg, 200 + static_cast<std::uint64_t>(trial));
    for (auto& a : p.adjacency.tensor.mutable_values()) a = rng.uniform(-1.0, 1.0);
    const TargetFeature x1 =
        random_target(TargetKind::human, 2, 2, cfg.feature_dim, rng);
    const TargetFeature x2 =
        random_target(TargetKind::scene, 2, 2, cfg.feature_dim, rng);
    const ProjectionState st = project(x1, x2, p);
    const Tensor vp = message_pass(st, p);
    const auto expect =
        oracle::eq2_message(p.adjacency.tensor.values(), st.V.values(),
                            2 * cfg.node_count, 2 * cfg.reduced_dim);
    for (std::size_t i = 0; i < expect.size(); ++i)
      CHECK(std::fabs(vp.values()[i] - expect[i]) <= 1e-10);
  }
}

TEST_CASE("update shape contract and zero-projection case") {
  const InGraphConfig cfg{4, 2, 3};  // 2N=6, 2C=4, D=4
  InGraphParams p = make_params(cfg, 13);
  Rng rng(14);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  ProjectionState st = project(x1, x2, p);
  const Tensor vp = message_pass(st, p);
  const Tensor y = update(vp, st, p, 2, 2);
  CHECK(y.shape() == Shape{2, 2, 4});
  CHECK_THROWS_AS(update(vp, st, p, 3, 2), ShapeError);

  // Zero projection weights: the reconstruction is the output-conv bias.
  st.B = Tensor(st.B.shape(), 0.0);
  const Tensor bias_map = update(vp, st, p, 2, 2);
  const auto& bias = p.out.bias.tensor.values();
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(bias_map.values()[l * 4 + d] == bias[d]);
}

TEST_CASE("update matches the reverse-projection oracle") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
    const InGraphConfig cfg{1 + rng.index(5), 1 + rng.index(4), 1 + rng.index(4)};
    InGraphParams p = make_params(cfg, 300 + static_cast<std::uint64_t>(trial));
    const TargetFeature x1 =
        random_target(TargetKind::human, h, w, cfg.feature_dim, rng);
    const TargetFeature x2 =
        random_target(TargetKind::scene, h, w, cfg.feature_dim, rng);
    const ProjectionState st = project(x1, x2, p);
    const Tensor vp = oracle::random_tensor(
        {2 * cfg.node_count, 2 * cfg.reduced_dim}, rng, -1.0, 1.0, false);
    const Tensor y_flat = matmul(transpose2d(st.B), vp);
    const auto expect = oracle::eq3_update(st.B.values(), vp.values(),
                                           2 * cfg.node_count, st.L,
                                           2 * cfg.reduced_dim);
    for (std::size_t i = 0; i < expect.size(); ++i)
      CHECK(std::fabs(y_flat.values()[i] - expect[i]) <= 1e-10);

    // and through the full update, against the conv of the oracle's plane
    const Tensor y = update(vp, st, p, h, w);
    const auto conv = oracle::loop_conv1x1(expect, p.out.weight.tensor.values(),
                                           p.out.bias.tensor.values(), h, w,
                                           2 * cfg.reduced_dim, cfg.feature_dim);
    for (std::size_t i = 0; i < conv.size(); ++i)
      CHECK(std::fabs(y.values()[i] - conv[i]) <= 1e-10);
  }
}

TEST_CASE("forward preserves the input shape across configs") {
  struct Case {
    std::size_t h, w, d;
  };
  const Case cases[] = {{2, 2, 4}, {4, 4, 16}, {7, 7, 32}};
  Rng rng(17);
  for (const Case& c : cases) {
    InGraphParams p = make_params({c.d, std::max<std::size_t>(1, c.d / 2),
                                   std::max<std::size_t>(1, c.d / 4)},
                                  400 + c.d);
    const TargetFeature x1 = random_target(TargetKind::human, c.h, c.w, c.d, rng);
    const TargetFeature x2 = random_target(TargetKind::scene, c.h, c.w, c.d, rng);
    const Tensor y = in_graph_forward(x1, x2, p);
    CHECK(y.shape() == x1.map.shape());
  }
}

TEST_CASE("all-zero parameters produce the constant output-bias map") {
  InGraphParams p = make_params({4, 2, 3}, 19);
  for (Parameter* prm : p.parameters())
    std::fill(prm->tensor.mutable_values().begin(),
              prm->tensor.mutable_values().end(), 0.0);
  p.out.bias.tensor.mutable_values() = {0.5, -1.0, 2.0, 0.0};
  Rng rng(20);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  const Tensor y = in_graph_forward(x1, x2, p);
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(y.values()[l * 4 + 0] == 0.5);
    CHECK(y.values()[l * 4 + 1] == -1.0);
    CHECK(y.values()[l * 4 + 2] == 2.0);
    CHECK(y.values()[l * 4 + 3] == 0.0);
  }
}

TEST_CASE("full-block gradient check for every parameter group") {
  const InGraphConfig cfg{16, 8, 4};
  InGraphParams p = make_params(cfg, 21);
  Rng rng(22);
  // Non-zero adjacency so its gradient path is exercised.
  for (auto& a : p.adjacency.tensor.mutable_values()) a = rng.uniform(-0.3, 0.3);
  const TargetFeature x1 = random_target(TargetKind::human, 4, 4, 16, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 4, 4, 16, rng);

  const auto loss = [&] { return sum_all(sigmoid(in_graph_forward(x1, x2, p))); };
  for (Parameter* prm : p.parameters()) {
    const double err = oracle::fd_max_rel_err([&] { return loss().value(); },
                                              [&] { backward(loss()); },
                                              {prm->tensor});
    INFO(prm->name);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("projection weights are reused: no second weights-inference set") {
  InGraphParams p = make_params({4, 2, 3}, 23);
  std::size_t theta_tensors = 0;
  for (Parameter* prm : p.parameters())
    if (prm->name.find(".theta") != std::string::npos) ++theta_tensors;
  CHECK(theta_tensors == 4);  // exactly two conv sets: 2 weights + 2 biases
  CHECK(p.parameters().size() == 11);

  // Perturbing a weights-inference parameter changes both the node matrix
  // and the reconstructed output (the same B serves both sides of the block).
  Rng rng(24);
  const TargetFeature x1 = random_target(TargetKind::human, 2, 2, 4, rng);
  const TargetFeature x2 = random_target(TargetKind::scene, 2, 2, 4, rng);
  const ProjectionState before = project(x1, x2, p);
  const Tensor out_before = in_graph_forward(x1, x2, p);
  p.theta1.weight.tensor.mutable_values()[0] += 0.25;
  const ProjectionState after = project(x1, x2, p);
  const Tensor out_after = in_graph_forward(x1, x2, p);
  CHECK(before.V.values() != after.V.values());
  CHECK(out_before.values() != out_after.values());
}

TEST_CASE("block parameters serialize under the instance prefix") {
  namespace fs = std::filesystem;
  InGraphParams p = make_params({4, 2, 3}, 25, "hs");
  for (Parameter* prm : p.parameters())
    CHECK(prm->name.rfind("ingraph.hs.", 0) == 0);

  const fs::path path = fs::temp_directory_path() / "ingraph_block.igk1";
  save_checkpoint(path.string(), p.parameters());
  InGraphParams q = make_params({4, 2, 3}, 26, "hs");
  load_checkpoint(path.string(), q.parameters());
  CHECK(q.phi1.weight.tensor.values() == p.phi1.weight.tensor.values());
  CHECK(q.adjacency.tensor.values() == p.adjacency.tensor.values());
  fs::remove(path);
}
