#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stgame/envs.hpp"

namespace stgame::evalh {

using envs::TwoPlayerEnv;
using envs::Vec;

using PolicyFn = std::function<Vec(const Vec&)>;

struct NamedPolicy {
  std::string id;
  PolicyFn act;
};

struct TournamentSpec {
  std::vector<NamedPolicy> player1_pool;
  std::vector<NamedPolicy> player2_pool;
  int games_per_pair = 20;
  uint64_t seed = 0;
};

struct GameRecord {
  std::string p1_id;
  std::string p2_id;
  int game_index = 0;
  uint64_t seed = 0;
  double score = 0.0;  // cumulative player-1 reward
  int steps = 0;
};

struct ScoreSummary {
  double mean = 0.0;
  double std = 0.0;  // n-1 denominator; 0 for a single sample
  double min = 0.0;
  double max = 0.0;
  int count = 0;
};

struct RankSumResult {
  double u = 0.0;        // U statistic of the first sample
  double p_value = 1.0;  // two-sided, normal approximation with ties
};

// Seed for one tournament game, mixed so that growing the pools never
// perturbs the seeds of existing games.
uint64_t tournament_game_seed(uint64_t seed, int pair_index, int game_index);

// Plays games_per_pair seeded games for every (p1, p2) pair. Policies are
// executed deterministically (no exploration noise).
std::vector<GameRecord> run_tournament(const TournamentSpec& spec,
                                       TwoPlayerEnv& env);

ScoreSummary summarize(const std::vector<double>& scores);

// Mann-Whitney U with midrank ties; two-sided p from the normal
// approximation with tie correction and continuity correction.
RankSumResult rank_sum_test(const std::vector<double>& xs,
                            const std::vector<double>& ys);

std::vector<double> scores_of(const std::vector<GameRecord>& records);

}  // namespace stgame::evalh
