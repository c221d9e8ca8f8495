// Generate a planted dataset, train for a few epochs, and compare ARS, dot
// product and BM25 on the held-out queries.
//
//   planted_demo [epochs]

#include <cstdio>
#include <cstdlib>

#include "apr/apr.hpp"

int main(int argc, char** argv)
{
    const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 10;

    apr::PlantedModelSpec spec;  // 1000 passages, 200 train / 100 test
    const auto data = apr::generate_planted(spec);

    apr::RunConfig cfg;
    cfg.epochs = epochs;
    const auto result = apr::train(cfg, data.train, data.corpus);
    std::printf("trained %zu steps, l_total %.4f -> %.4f\n", result.log.size(),
                result.epoch_mean(0, &apr::StepMetrics::l_total),
                result.log.empty() ? 0.0 : result.epoch_mean(result.log.back().epoch, &apr::StepMetrics::l_total));

    const auto built = apr::build_index(data.corpus, result.checkpoint);
    const apr::Retriever retriever(result.checkpoint, built.index);
    const apr::LexicalIndex lexical(data.corpus);
    const apr::EvalArtifacts artifacts{&retriever, &lexical};
    for (auto method : {apr::EvalMethod::Ars, apr::EvalMethod::Dot, apr::EvalMethod::Bm25}) {
        const auto report = apr::evaluate(method, data.test, artifacts, {1, 10, 100});
        std::printf("%-5s top1 %.2f  top10 %.2f  top100 %.2f\n", apr::to_string(method).c_str(), report.accuracy_at(1),
                    report.accuracy_at(10), report.accuracy_at(100));
    }

    const auto hits = retriever.retrieve(data.test.front().question, 3);
    std::printf("\nquery: %s\n", data.test.front().question.c_str());
    for (const auto& h : hits.hits) {
        std::printf("  pid %llu  s %.6f  r %.6f\n", static_cast<unsigned long long>(h.pid), h.s, h.r);
    }
    return 0;
}
