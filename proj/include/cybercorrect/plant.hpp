#pragma once

#include <string>

#include "cybercorrect/controller.hpp"
#include "cybercorrect/core.hpp"
#include "cybercorrect/detector.hpp"
#include "cybercorrect/task.hpp"

namespace cybercorrect {

// Which detection modalities a run wants elicited.
struct ModalitySet {
    bool sc = true;
    bool vc = true;
    bool lc = true;

    static ModalitySet all() { return {true, true, true}; }
    static ModalitySet sc_only() { return {true, false, false}; }

    bool operator==(const ModalitySet&) const = default;
};

inline std::vector<std::string> to_strings(const ModalitySet& m) {
    std::vector<std::string> out;
    if (m.sc) out.push_back("sc");
    if (m.vc) out.push_back("vc");
    if (m.lc) out.push_back("lc");
    return out;
}

// The controlled system. observe() must not mutate the chain; correct()
// returns a complete new chain. Implementations may fill only a subset of
// the requested modalities when elicitation partially fails; the loop
// renormalizes detector weights over what arrived. Raising PlantFailure
// (Error with Errc::plant_failure) aborts the run.
class Plant {
public:
    virtual ~Plant() = default;

    virtual ReasoningChain generate(const BenchTask& task) = 0;
    virtual ModalityObservations observe(const BenchTask& task, const ReasoningChain& chain,
                                         int k, const ModalitySet& needs) = 0;
    virtual ReasoningChain correct(const BenchTask& task, const ReasoningChain& chain,
                                   const ControlInput& input) = 0;
};

}  // namespace cybercorrect
