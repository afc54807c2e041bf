// Records the fixture responder's answers for a full pipeline run so the
// run can be replayed without a model.
#include "conformgen/pipeline.hpp"
#include "fixture_responder.hpp"

#include <iostream>

namespace fs = std::filesystem;
using namespace conformgen;

int main(int argc, char** argv)
{
    if (argc < 4) {
        std::cerr << "usage: make_fixture_transcript <spec.txt> <transcript.jsonl> <run-dir> [faults.json]\n";
        return 2;
    }
    try {
        auto cfg = pipeline::RunConfig::defaults();
        cfg.spec_path = argv[1];
        cfg.backend.mode = llm::BackendMode::record;
        cfg.backend.transcript_path = argv[2];
        cfg.run_dir = argv[3];
        if (argc > 4)
            cfg.fault_profile = argv[4];
        fs::remove_all(cfg.run_dir);
        auto backend = std::make_shared<llm::RecordingBackend>(fixture::make_backend(), argv[2]);
        pipeline::run(cfg, backend);
        std::cout << pipeline::report(cfg.run_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
