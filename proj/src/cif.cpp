#include "w2p/cif.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "w2p/errors.hpp"

namespace w2p::cif {

TailPolicy parse_tail_policy(const std::string& s) {
  if (s == "always-fire") return TailPolicy::AlwaysFire;
  if (s == "drop") return TailPolicy::Drop;
  if (s == "fire-if-half" || s == "fire-if-ge-0.5") return TailPolicy::FireIfHalf;
  throw UsageError("unknown tail policy: " + s);
}

std::string to_string(TailPolicy p) {
  switch (p) {
    case TailPolicy::AlwaysFire:
      return "always-fire";
    case TailPolicy::Drop:
      return "drop";
    case TailPolicy::FireIfHalf:
      return "fire-if-half";
  }
  return "?";
}

double FireEvent::mass() const {
  double m = 0.0;
  for (const auto& c : parts) m += c.weight;
  return m;
}

FiringWeights firing_weights(const Matrix& frames) {
  if (frames.cols() < 2)
    throw ShapeError("firing_weights: need at least 2 columns, got " +
                     std::to_string(frames.cols()));
  FiringWeights w;
  w.alphas = frames.col(frames.cols() - 1).unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  w.mode = WeightMode::Raw;
  return w;
}

FiringWeights scale_weights(const FiringWeights& w, int target_length) {
  if (w.mode != WeightMode::Raw) throw UsageError("scale_weights: weights already scaled");
  if (target_length < 1) throw UsageError("scale_weights: target length must be >= 1");
  const double total = w.total();
  if (!(total > 0.0))
    throw DegenerateInputError("scale_weights: firing weights sum to zero");
  FiringWeights out;
  out.alphas = w.alphas * (static_cast<double>(target_length) / total);
  out.mode = WeightMode::Scaled;
  out.target_length = target_length;
  return out;
}

FireResult integrate(const ColVector& alphas, double threshold, TailPolicy tail) {
  FireResult result;
  FireEvent current;
  double acc = 0.0;
  int next_index = 0;

  for (Eigen::Index t = 0; t < alphas.size(); ++t) {
    double remaining = alphas(t);
    bool starts_mid = false;
    while (true) {
      if (acc + remaining >= threshold - kFireEpsilon) {
        const double part = std::min(remaining, threshold - acc);
        const double rest = remaining - part;
        current.parts.push_back({static_cast<int>(t), part, starts_mid, rest > 0.0});
        if (rest > 0.0) current.split = std::make_pair(part, rest);
        current.index = next_index++;
        current.complete = true;
        result.events.push_back(std::move(current));
        current = FireEvent{};
        acc = 0.0;
        if (!(rest > 0.0)) break;
        remaining = rest;
        starts_mid = true;
        continue;
      }
      if (remaining > 0.0) {
        current.parts.push_back({static_cast<int>(t), remaining, starts_mid, false});
        acc += remaining;
      }
      break;
    }
  }

  result.residual = acc;
  if (!current.parts.empty() && acc >= kFireEpsilon) {
    const bool fire = tail == TailPolicy::AlwaysFire ||
                      (tail == TailPolicy::FireIfHalf && acc >= 0.5 * threshold);
    if (fire) {
      current.index = next_index;
      current.complete = false;
      result.events.push_back(std::move(current));
      result.residual = 0.0;
    }
  }
  return result;
}

PooledResult integrate_and_fire(const Matrix& content, const FiringWeights& w, double threshold,
                                TailPolicy tail) {
  if (content.rows() != w.size())
    throw ShapeError("integrate_and_fire: " + std::to_string(content.rows()) + " frames but " +
                     std::to_string(w.size()) + " weights");
  PooledResult out;
  out.fire = integrate(w.alphas, threshold, tail);
  out.pooled = Matrix::Zero(static_cast<Eigen::Index>(out.fire.events.size()), content.cols());
  for (const auto& ev : out.fire.events)
    for (const auto& c : ev.parts) out.pooled.row(ev.index) += c.weight * content.row(c.frame);
  return out;
}

Matrix project(const Matrix& pooled, const Matrix& weight, const RowVector& bias) {
  if (pooled.cols() != weight.rows() || weight.cols() != bias.size())
    throw ShapeError("project: pooled/weight/bias shapes disagree");
  Matrix s = pooled * weight;
  s.rowwise() += bias;
  return s;
}

double quantity_loss(const FiringWeights& w, int target_length) {
  if (w.mode != WeightMode::Raw) throw UsageError("quantity_loss: needs raw weights");
  return std::abs(w.total() - static_cast<double>(target_length));
}

void dump_events(std::ostream& os, const std::vector<FireEvent>& events) {
  for (const auto& ev : events) {
    nlohmann::json j;
    j["index"] = ev.index;
    std::vector<int> frames;
    std::vector<double> weights;
    for (const auto& c : ev.parts) {
      frames.push_back(c.frame);
      weights.push_back(c.weight);
    }
    j["frames"] = frames;
    j["weights"] = weights;
    if (ev.split)
      j["split"] = {ev.split->first, ev.split->second};
    else
      j["split"] = nullptr;
    j["mass"] = ev.mass();
    j["complete"] = ev.complete;
    os << j.dump() << '\n';
  }
}

diff::Var contribution_matrix(diff::Tape& tape, diff::Var alphas,
                              const std::vector<FireEvent>& events) {
  const Eigen::Index T = tape.rows(alphas);
  if (tape.cols(alphas) != 1) throw ShapeError("contribution_matrix: alphas must be T x 1");
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(events.size()), T);
  for (const auto& ev : events)
    for (const auto& p : ev.parts) {
      if (p.frame >= T) throw ShapeError("contribution_matrix: event frame out of range");
      c(ev.index, p.frame) += p.weight;
    }

  // Each piece is (upper - lower) of the frame's interval on the cumulative
  // weight axis intersected with the event's interval. An edge that sits on
  // an event boundary is constant; one that sits on a frame edge is the
  // cumulative sum A_t (upper) or A_{t-1} (lower).
  return tape.custom(std::move(c), {alphas}, [alphas, events](diff::Tape& t, int self) {
    const Matrix& g = t.grad_of_node(self);
    const Eigen::Index T = t.rows(alphas);
    ColVector d_cum = ColVector::Zero(T);
    for (const auto& ev : events)
      for (const auto& p : ev.parts) {
        const double gp = g(ev.index, p.frame);
        if (!p.ends_mid_frame) d_cum(p.frame) += gp;
        if (!p.starts_mid_frame && p.frame > 0) d_cum(p.frame - 1) -= gp;
      }
    Matrix& ga = t.grad_accumulator(alphas);
    double suffix = 0.0;
    for (Eigen::Index s = T - 1; s >= 0; --s) {
      suffix += d_cum(s);
      ga(s, 0) += suffix;
    }
  });
}

diff::Var scale_to_length(diff::Tape& tape, diff::Var alphas, int target_length) {
  if (target_length < 1) throw UsageError("scale_to_length: target length must be >= 1");
  const diff::Var total = tape.sum(alphas);
  if (!(tape.scalar(total) > 0.0))
    throw DegenerateInputError("scale_to_length: firing weights sum to zero");
  const diff::Var m = tape.constant(Matrix::Constant(1, 1, static_cast<double>(target_length)));
  return tape.mul(alphas, tape.div(m, total));
}

diff::Var quantity_loss(diff::Tape& tape, diff::Var raw_alphas, int target_length) {
  const diff::Var m = tape.constant(Matrix::Constant(1, 1, static_cast<double>(target_length)));
  return tape.abs(tape.sub(tape.sum(raw_alphas), m));
}

CifOutput cif_forward(diff::Tape& tape, diff::Var frames, std::optional<int> target_length,
                      double threshold, TailPolicy tail) {
  const Eigen::Index d = tape.cols(frames);
  if (d < 2) throw ShapeError("cif_forward: need at least 2 columns");
  CifOutput out;
  const diff::Var logits = tape.slice_cols(frames, d - 1, 1);
  const diff::Var content = tape.slice_cols(frames, 0, d - 1);
  out.raw_alphas = tape.logistic(logits);
  out.used_alphas =
      target_length ? scale_to_length(tape, out.raw_alphas, *target_length) : out.raw_alphas;
  const ColVector used = tape.value(out.used_alphas).col(0);
  out.fire = integrate(used, threshold, tail);
  const diff::Var contrib = contribution_matrix(tape, out.used_alphas, out.fire.events);
  out.pooled = tape.matmul(contrib, content);
  return out;
}

}  // namespace w2p::cif
