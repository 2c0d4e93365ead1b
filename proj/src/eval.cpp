#include "stgame/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stgame::evalh {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t tournament_game_seed(uint64_t seed, int pair_index, int game_index) {
  uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<uint64_t>(pair_index));
  h = splitmix64(h ^ static_cast<uint64_t>(game_index));
  return h;
}

std::vector<GameRecord> run_tournament(const TournamentSpec& spec,
                                       TwoPlayerEnv& env) {
  if (spec.player1_pool.empty() || spec.player2_pool.empty())
    throw std::invalid_argument("run_tournament: empty policy pool");
  // Probe every policy against the observation shape before playing.
  Vec probe = env.reset(0);
  for (const auto& pool : {spec.player1_pool, spec.player2_pool}) {
    for (const auto& p : pool) {
      Vec a = p.act(probe);
      const bool is_p1 = &pool == &spec.player1_pool;
      if (a.size() != (is_p1 ? env.act1_dim() : env.act2_dim()))
        throw std::invalid_argument("run_tournament: policy '" + p.id +
                                    "' action dimension mismatch");
    }
  }

  std::vector<GameRecord> records;
  int pair_index = 0;
  for (const auto& p1 : spec.player1_pool) {
    for (const auto& p2 : spec.player2_pool) {
      for (int g = 0; g < spec.games_per_pair; ++g) {
        GameRecord rec;
        rec.p1_id = p1.id;
        rec.p2_id = p2.id;
        rec.game_index = g;
        rec.seed = tournament_game_seed(spec.seed, pair_index, g);
        Vec obs = env.reset(rec.seed);
        while (true) {
          envs::StepResult r = env.step(p1.act(obs), p2.act(obs));
          rec.score += r.reward;
          ++rec.steps;
          if (r.done) break;
          obs = r.next_obs;
        }
        records.push_back(std::move(rec));
      }
      ++pair_index;
    }
  }
  return records;
}

ScoreSummary summarize(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("summarize: empty input");
  ScoreSummary s;
  s.count = static_cast<int>(scores.size());
  s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / s.count;
  s.min = *std::min_element(scores.begin(), scores.end());
  s.max = *std::max_element(scores.begin(), scores.end());
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : scores) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.count - 1));
  }
  return s;
}

RankSumResult rank_sum_test(const std::vector<double>& xs,
                            const std::vector<double>& ys) {
  const size_t nx = xs.size(), ny = ys.size();
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("rank_sum_test: need at least 2 per sample");
  const size_t n = nx + ny;

  struct Entry {
    double value;
    bool from_x;
  };
  std::vector<Entry> all;
  all.reserve(n);
  for (double v : xs) all.push_back({v, true});
  for (double v : ys) all.push_back({v, false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.value < b.value; });

  // Midranks and tie correction term sum(t^3 - t).
  double rank_sum_x = 0.0;
  double tie_term = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && all[j].value == all[i].value) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (all[k].from_x) rank_sum_x += midrank;
    tie_term += t * t * t - t;
    i = j;
  }

  RankSumResult result;
  const double dx = static_cast<double>(nx), dy = static_cast<double>(ny);
  result.u = rank_sum_x - dx * (dx + 1.0) / 2.0;

  const double mu = dx * dy / 2.0;
  const double dn = static_cast<double>(n);
  const double var =
      dx * dy / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    result.p_value = 1.0;  // all values identical across both samples
    return result;
  }
  double z = result.u - mu;
  // Continuity correction toward the mean.
  if (z > 0.5)
    z -= 0.5;
  else if (z < -0.5)
    z += 0.5;
  else
    z = 0.0;
  z /= std::sqrt(var);
  result.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  return result;
}

std::vector<double> scores_of(const std::vector<GameRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.score);
  return out;
}

}  // namespace stgame::evalh
