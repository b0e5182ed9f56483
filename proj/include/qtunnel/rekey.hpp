#pragma once

#include <optional>

namespace qtunnel::ike {

struct RekeyPolicy {
    double interval = 120.0;
    double grace = 5.0;

    // interval > grace > 0
    void validate() const;
};

// Timer state for one Child SA. Failed attempts back off exponentially
// (grace/4, grace/2, grace, grace, ...) and never wait longer than grace.
class RekeyScheduler {
public:
    RekeyScheduler(RekeyPolicy policy, double installed_at);

    bool due(double now) const { return now >= next_attempt_; }
    double next_attempt() const { return next_attempt_; }
    double last_success() const { return last_success_; }
    int consecutive_failures() const { return failures_; }

    void on_success(double now);
    void on_failure(double now);

    // The active SA has outlived interval + grace.
    bool overdue(double now) const { return now > last_success_ + policy_.interval + policy_.grace; }

    double backoff_for(int failures) const;
    const RekeyPolicy& policy() const { return policy_; }

private:
    RekeyPolicy policy_;
    double last_success_;
    double next_attempt_;
    int failures_ = 0;
};

}  // namespace qtunnel::ike
