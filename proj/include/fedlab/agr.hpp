#pragma once

// Byzantine-robust aggregation rules. Each rule is a pure function of the
// submitted updates (plus server-side context where the rule needs it) and
// reports which clients it kept, so every round can be audited.

#include "fedlab/data.hpp"
#include "fedlab/model.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace fedlab {

struct GradientUpdate {
    int client_id = 0;
    int round = 0;
    Vec values;       // gradient w.r.t. the flat trainable vector
    Vec buffer_delta; // change to the flat buffer vector
    double train_loss = 0.0;
    double train_acc = 0.0;
};

enum class AgrRule { mean, multi_krum, bulyan, trimmed_mean, median, afa, fang };

const char* agr_rule_name(AgrRule r);
AgrRule agr_rule_from_name(const std::string& name);

struct AgrConfig {
    AgrRule rule = AgrRule::multi_krum;
    int m = 2;                          // server-assumed malicious count
    AgrRule fang_base = AgrRule::mean;  // rule fang re-aggregates with
    bool afa_normalize = true;          // rescale kept updates to the reference norm
};

// Server-side material some rules need: the current model, a clean validation
// set, and the learning rate for trial steps.
struct AgrContext {
    const ModelSpec* spec = nullptr;
    const ParamVector* params = nullptr;
    const LabeledSet* validation = nullptr;
    double alpha = 0.1;
};

struct AggregateResult {
    Vec values;
    Vec buffer_delta;          // mean over the selected set
    std::vector<int> selected; // client ids, ascending
    std::vector<int> rejected;
    std::vector<double> weights; // afa: aligned with selected
    std::string note;            // fallbacks and rule remarks
};

AggregateResult aggregate(const AgrConfig& cfg, const std::vector<GradientUpdate>& updates,
                          const AgrContext* ctx = nullptr);

// Append-only JSON-lines audit sink; one object per aggregation.
class AuditLog {
public:
    explicit AuditLog(const std::string& path);
    ~AuditLog();
    void record(const AgrConfig& cfg, int round, const AggregateResult& res);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string audit_line(const AgrConfig& cfg, int round, const AggregateResult& res);

} // namespace fedlab
