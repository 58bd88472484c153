// Skill-level replay: one transition per executed skill (s_t, z_t, summed
// H-step reward, s_{t+H}). Windows of N consecutive transitions are sampled
// for the unrolled downstream losses and never cross an episode boundary;
// capacity eviction always drops whole episodes.

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "skimo/common.hpp"

namespace skimo {

struct SkillTransition {
  std::vector<float> s, z, s_next;
  double r = 0;       // env reward summed over the skill's steps
  bool done = false;  // terminal (goal reached): drops the value bootstrap
  long long episode_id = 0;
  int index = 0;  // skill index within the episode
};

// Batched window view: row b*n + i holds step i of window b.
struct RlWindowBatch {
  int batch = 0, n = 0, obs_dim = 0, skill_dim = 0;
  Mat<float> s, z, r, s_next;
  std::vector<uint8_t> done;
  std::vector<std::pair<long long, int>> source;  // (episode_id, start index)

  const float* s_at(int b, int i) const { return s.row(b * n + i); }
  const float* z_at(int b, int i) const { return z.row(b * n + i); }
  const float* s_next_at(int b, int i) const { return s_next.row(b * n + i); }
  float r_at(int b, int i) const { return r.at(b * n + i, 0); }
  bool done_at(int b, int i) const { return done[size_t(b * n + i)] != 0; }
};

class ReplayBuffer {
 public:
  ReplayBuffer(size_t capacity, int obs_dim, int skill_dim)
      : capacity_(capacity), obs_dim_(obs_dim), skill_dim_(skill_dim) {
    if (capacity == 0) throw UsageError("replay: capacity must be > 0");
    if (obs_dim < 1 || skill_dim < 1) throw UsageError("replay: bad dims");
  }

  size_t size() const { return total_; }
  size_t episode_count() const { return episodes_.size(); }
  int obs_dim() const { return obs_dim_; }
  int skill_dim() const { return skill_dim_; }

  void push(SkillTransition t) {
    if (int(t.s.size()) != obs_dim_ || int(t.s_next.size()) != obs_dim_ ||
        int(t.z.size()) != skill_dim_)
      throw UsageError("replay: transition dims do not match buffer");
    if (!std::isfinite(t.r)) throw UsageError("replay: non-finite reward");
    for (float v : t.s)
      if (!std::isfinite(v)) throw UsageError("replay: non-finite observation");
    if (!episodes_.empty() && episodes_.back().id == t.episode_id) {
      auto& ep = episodes_.back();
      if (t.index != ep.items.back().index + 1)
        throw UsageError("replay: non-consecutive index within episode");
      if (ep.items.back().done) throw UsageError("replay: append after terminal transition");
      ep.items.push_back(std::move(t));
    } else {
      if (t.index != 0) throw UsageError("replay: new episode must start at index 0");
      episodes_.push_back({t.episode_id, {}});
      episodes_.back().items.push_back(std::move(t));
    }
    ++total_;
    dirty_ = true;
    while (total_ > capacity_ && episodes_.size() > 1) {
      total_ -= episodes_.front().items.size();
      episodes_.pop_front();
    }
  }

  // Number of distinct in-episode windows of length n.
  long long eligible_windows(int n) const {
    rebuild_index(n);
    return cached_total_;
  }

  // Uniform over all (episode, start) pairs admitting n consecutive
  // transitions; stored payloads are copied bitwise.
  RlWindowBatch sample(int batch, int n, Rng& rng) const {
    if (batch < 1 || n < 1) throw UsageError("replay: batch and n must be >= 1");
    rebuild_index(n);
    if (cached_total_ == 0)
      throw UsageError("replay: no episode holds a window of " + std::to_string(n) +
                       " transitions");
    RlWindowBatch wb;
    wb.batch = batch;
    wb.n = n;
    wb.obs_dim = obs_dim_;
    wb.skill_dim = skill_dim_;
    wb.s = Mat<float>(batch * n, obs_dim_);
    wb.z = Mat<float>(batch * n, skill_dim_);
    wb.r = Mat<float>(batch * n, 1);
    wb.s_next = Mat<float>(batch * n, obs_dim_);
    wb.done.assign(size_t(batch) * n, 0);
    for (int b = 0; b < batch; ++b) {
      long long pick = (long long)(rng.uniform() * double(cached_total_));
      if (pick >= cached_total_) pick = cached_total_ - 1;
      size_t e = size_t(std::upper_bound(cached_cum_.begin(), cached_cum_.end(), pick) -
                        cached_cum_.begin());
      long long before = e == 0 ? 0 : cached_cum_[e - 1];
      int start = int(pick - before);
      const auto& ep = episodes_[e];
      wb.source.push_back({ep.id, start});
      for (int i = 0; i < n; ++i) {
        const auto& t = ep.items[size_t(start + i)];
        int row = b * n + i;
        std::copy(t.s.begin(), t.s.end(), wb.s.row(row));
        std::copy(t.z.begin(), t.z.end(), wb.z.row(row));
        std::copy(t.s_next.begin(), t.s_next.end(), wb.s_next.row(row));
        wb.r.at(row, 0) = float(t.r);
        wb.done[size_t(row)] = t.done ? 1 : 0;
      }
    }
    return wb;
  }

  // Direct lookup for audits: episode by id, or nullptr.
  const std::vector<SkillTransition>* episode(long long id) const {
    for (const auto& ep : episodes_)
      if (ep.id == id) return &ep.items;
    return nullptr;
  }

  // Ids of the stored episodes, oldest first.
  std::vector<long long> episode_ids() const {
    std::vector<long long> ids;
    ids.reserve(episodes_.size());
    for (const auto& ep : episodes_) ids.push_back(ep.id);
    return ids;
  }

 private:
  struct Episode {
    long long id = 0;
    std::vector<SkillTransition> items;
  };

  void rebuild_index(int n) const {
    if (!dirty_ && cached_n_ == n) return;
    cached_cum_.clear();
    long long run = 0;
    for (const auto& ep : episodes_) {
      long long w = std::max<long long>(0, (long long)(ep.items.size()) - n + 1);
      run += w;
      cached_cum_.push_back(run);
    }
    cached_total_ = run;
    cached_n_ = n;
    dirty_ = false;
  }

  size_t capacity_, total_ = 0;
  int obs_dim_, skill_dim_;
  std::deque<Episode> episodes_;
  mutable std::vector<long long> cached_cum_;
  mutable long long cached_total_ = 0;
  mutable int cached_n_ = 0;
  mutable bool dirty_ = true;
};

}  // namespace skimo
