#pragma once

#include <string>
#include <vector>

#include "ingraph/optim.hpp"
#include "ingraph/rng.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

struct InGraphConfig {
  std::size_t feature_dim = 32;  // D, channels of the input maps
  std::size_t reduced_dim = 16;  // C, channels per target inside the graph
  std::size_t node_count = 8;    // N, nodes per target

  void validate() const {
    if (feature_dim < 1 || reduced_dim < 1 || node_count < 1)
      throw ValueError("in-graph config dims must all be >= 1");
  }
};

enum class TargetKind { scene, human, object };

// Convolutional feature map [H,W,D] of one visual target.
struct TargetFeature {
  TargetKind kind = TargetKind::scene;
  Tensor map;
};

// Everything the projection produces that the update step reuses:
// nodes V = B * X_r, plus the projection weights B themselves.
struct ProjectionState {
  Tensor V;    // [2N,2C]
  Tensor B;    // [2N,L]
  Tensor X_r;  // [L,2C]
  std::size_t L = 0;
};

// Parameters of one interactive-graph block: per-target feature-conversion
// convs (D->C), per-target weights-inference convs (D->N), the learned
// node adjacency [2N,2N], and the output expansion conv (2C->D).
struct InGraphParams {
  InGraphConfig cfg;
  Conv1x1Params phi1, phi2;      // feature conversion
  Conv1x1Params theta1, theta2;  // weights inference
  Parameter adjacency;           // starts at zero: block begins as identity reasoning
  Conv1x1Params out;

  static InGraphConfig checked(InGraphConfig c) {
    c.validate();
    return c;
  }

  InGraphParams(const std::string& instance, InGraphConfig config, Rng& rng)
      : cfg(checked(config)),
        phi1("ingraph." + instance + ".phi1", cfg.feature_dim, cfg.reduced_dim, rng),
        phi2("ingraph." + instance + ".phi2", cfg.feature_dim, cfg.reduced_dim, rng),
        theta1("ingraph." + instance + ".theta1", cfg.feature_dim, cfg.node_count, rng),
        theta2("ingraph." + instance + ".theta2", cfg.feature_dim, cfg.node_count, rng),
        adjacency("ingraph." + instance + ".adjacency",
                  Tensor({2 * cfg.node_count, 2 * cfg.node_count}, 0.0)),
        out("ingraph." + instance + ".out", 2 * cfg.reduced_dim, cfg.feature_dim, rng) {}

  std::vector<Parameter*> parameters() {
    return {&phi1.weight,   &phi1.bias,   &phi2.weight,   &phi2.bias,
            &theta1.weight, &theta1.bias, &theta2.weight, &theta2.bias,
            &adjacency,     &out.weight,  &out.bias};
  }
};

namespace detail {

inline void check_pair(const TargetFeature& x1, const TargetFeature& x2,
                       const InGraphParams& p) {
  const Shape& s1 = x1.map.shape();
  const Shape& s2 = x2.map.shape();
  if (s1.size() != 3 || s1 != s2)
    throw ShapeError("in-graph: target maps must share [H,W,D], got " +
                     shape_str(s1) + " and " + shape_str(s2));
  if (s1[2] != p.cfg.feature_dim)
    throw ShapeError("in-graph: target channels " + shape_str(s1) +
                     " do not match configured feature_dim " +
                     std::to_string(p.cfg.feature_dim));
}

}  // namespace detail

// Projection into the interactive space. Feature conversion reduces each
// target to C channels and flattens it to [L,C]; weights inference produces
// per-node location weights [N,L]; the linear combination V = B * X_r then
// forms the 2N nodes, v_i = sum_j b_ij * x_j^r.
inline ProjectionState project(const TargetFeature& x1, const TargetFeature& x2,
                               const InGraphParams& p) {
  detail::check_pair(x1, x2, p);
  const std::size_t h = x1.map.dim(0), w = x1.map.dim(1);
  const std::size_t l = h * w;
  const std::size_t c = p.cfg.reduced_dim, n = p.cfg.node_count;

  const Tensor x1r = reshape(p.phi1(x1.map), {l, c});
  const Tensor x2r = reshape(p.phi2(x2.map), {l, c});
  const Tensor xr = concat(x1r, x2r, 1);  // [L,2C]

  // [H,W,N] -> planar [L,N] -> [N,L], so row i holds node i's weight per location.
  const Tensor b1 = transpose2d(reshape(p.theta1(x1.map), {l, n}));
  const Tensor b2 = transpose2d(reshape(p.theta2(x2.map), {l, n}));
  const Tensor b = concat(b1, b2, 0);  // [2N,L]

  ProjectionState st;
  st.B = b;
  st.X_r = xr;
  st.V = matmul(b, xr);  // [2N,2C]
  st.L = l;
  return st;
}

// Message passing over the fully-connected node graph: V' = A*V + V.
// The learned adjacency mixes nodes and is shared across all channels;
// the residual add keeps the zero-adjacency block an exact identity.
inline Tensor message_pass(const ProjectionState& state, const InGraphParams& p) {
  return add(matmul(p.adjacency.tensor, state.V), state.V);
}

// Reverse projection: y_i = sum_j b_ji * v'_j, reshape to [H,W,2C], then a
// 1x1 conv expands the channels back to D.
inline Tensor update(const Tensor& v_prime, const ProjectionState& state,
                     const InGraphParams& p, std::size_t out_h, std::size_t out_w) {
  if (out_h * out_w != state.L)
    throw ShapeError("in-graph update: output [" + std::to_string(out_h) + "," +
                     std::to_string(out_w) + "] does not match projected L=" +
                     std::to_string(state.L));
  const Tensor y_flat = matmul(transpose2d(state.B), v_prime);  // [L,2C]
  const Tensor y = reshape(y_flat, {out_h, out_w, 2 * p.cfg.reduced_dim});
  return p.out(y);
}

// Full block: project, pass messages, project back. Output shape equals the
// input maps' shape.
inline Tensor in_graph_forward(const TargetFeature& x1, const TargetFeature& x2,
                               const InGraphParams& p) {
  const ProjectionState st = project(x1, x2, p);
  const Tensor reasoned = message_pass(st, p);
  return update(reasoned, st, p, x1.map.dim(0), x1.map.dim(1));
}

}  // namespace ingraph
