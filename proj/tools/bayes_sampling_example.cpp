// Sample a small Markov corpus with its exact Bayes denoiser and compare the
// sampler's law with the corpus law as the number of steps grows.
#include <cstdio>

#include "duo/corpus.hpp"
#include "duo/models.hpp"
#include "duo/sampling.hpp"
#include "duo/seqdist.hpp"

int main() {
  const std::size_t K = 3, L = 3;
  const duo::Corpus corpus = duo::generate_markov(K, L, 200, 0.5, 1);
  const duo::BayesDenoiser bayes(corpus.seqs, K);
  const auto data = duo::empirical_distribution(corpus.seqs, K, L);
  for (std::size_t T : {1u, 4u, 16u, 64u, 256u}) {
    const auto law = duo::ancestral_law(bayes, K, L, T, false);
    const auto greedy = duo::ancestral_law(bayes, K, L, T, true);
    std::printf("T=%-4zu TV(sampler, data) = %.4f   with greedy tail = %.4f\n", T, duo::tv_distance(law, data),
                duo::tv_distance(greedy, data));
  }
  return 0;
}
