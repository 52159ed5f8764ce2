#include <benchmark/benchmark.h>

#include <random>

#include "subnav/agent.hpp"
#include "subnav/analysis.hpp"
#include "subnav/dataset.hpp"
#include "subnav/metrics.hpp"

using namespace subnav;

namespace {

struct Corpus {
  GraphStore store;
  std::vector<Episode> episodes;
  std::vector<std::vector<std::string>> trajectories;
  std::vector<std::vector<std::string>> sub_instructions;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus out;
    std::mt19937_64 rng(1);
    for (std::uint64_t w = 0; w < 40; ++w) {
      auto world = generate_toy_world(w, 30, 50);
      for (const auto& ep : world.episodes) {
        out.episodes.push_back(ep);
        std::vector<std::string> walk{ep.path.front()};
        int node = world.graph.index_of(ep.path.front());
        for (int s = 0; s < 8; ++s) {
          const auto& nbrs = world.graph.neighbors(node);
          node = nbrs[std::uniform_int_distribution<std::size_t>(0, nbrs.size() - 1)(rng)].to;
          walk.push_back(world.graph.node(node).id);
        }
        out.trajectories.push_back(std::move(walk));
        for (const auto& s : ep.sub_instructions) {
          if (out.sub_instructions.size() < 400) out.sub_instructions.push_back(s.words);
        }
      }
      out.store.add(std::move(world.graph));
    }
    return out;
  }();
  return c;
}

struct TrainBatch {
  ToyWorld world = generate_toy_world(3, 12, 16);
  Vocab vocab = build_vocab(world.episodes);
  FeatureBank features;
  ModelParams params = [this] {
    ModelConfig mc;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.feature_dim = features.feature_dim();
    return ModelParams::init(mc, 0);
  }();
  std::vector<EpisodeRef> refs = [this] {
    std::vector<EpisodeRef> r;
    for (const auto& e : world.episodes) r.emplace_back(&e, &world.graph);
    return r;
  }();
  std::vector<std::uint64_t> seeds = std::vector<std::uint64_t>(16, 5);
};

const TrainBatch& batch() {
  static const TrainBatch b;
  return b;
}

void BM_CorpusStats(benchmark::State& state) {
  const auto& c = corpus();
  for (auto _ : state) {
    benchmark::DoNotOptimize(state.range(0) ? corpus_stats(c.episodes) : corpus_stats_serial(c.episodes));
  }
}

void BM_EvaluateAll(benchmark::State& state) {
  const auto& c = corpus();
  for (auto _ : state) {
    benchmark::DoNotOptimize(state.range(0) ? evaluate_all(c.store, c.episodes, c.trajectories)
                                            : evaluate_all_serial(c.store, c.episodes, c.trajectories));
  }
}

void BM_SimilarityMatrix(benchmark::State& state) {
  const auto& c = corpus();
  for (auto _ : state) {
    benchmark::DoNotOptimize(state.range(0) ? similarity_matrix(c.sub_instructions)
                                            : similarity_matrix_serial(c.sub_instructions));
  }
}

void BM_BatchGradients(benchmark::State& state) {
  const auto& b = batch();
  const AgentContext agent{b.params, b.vocab, b.features};
  RolloutConfig rc;
  rc.sample_actions = true;
  rc.shift_forcing = ShiftForcing::Teacher;
  rc.max_steps = 12;
  for (auto _ : state) {
    benchmark::DoNotOptimize(state.range(0) ? batch_gradients(b.refs, agent, rc, b.seeds)
                                            : batch_gradients_serial(b.refs, agent, rc, b.seeds));
  }
}

}  // namespace

BENCHMARK(BM_CorpusStats)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EvaluateAll)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimilarityMatrix)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradients)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
