#include "qtunnel/rekey.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qtunnel::ike {

void RekeyPolicy::validate() const {
    if (!(grace > 0)) throw std::invalid_argument("rekey grace must be > 0");
    if (!(interval > grace)) throw std::invalid_argument("rekey interval must be > grace");
}

RekeyScheduler::RekeyScheduler(RekeyPolicy policy, double installed_at)
    : policy_(policy), last_success_(installed_at), next_attempt_(installed_at + policy.interval) {
    policy_.validate();
}

double RekeyScheduler::backoff_for(int failures) const {
    double base = policy_.grace / 4.0;
    return std::min(policy_.grace, base * std::ldexp(1.0, std::max(0, failures - 1)));
}

void RekeyScheduler::on_success(double now) {
    failures_ = 0;
    last_success_ = now;
    next_attempt_ = now + policy_.interval;
}

void RekeyScheduler::on_failure(double now) {
    ++failures_;
    next_attempt_ = now + backoff_for(failures_);
}

}  // namespace qtunnel::ike
