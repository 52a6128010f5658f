// SPDX-License-Identifier: Apache-2.0
#include "mmloc/errors.hpp"

#include <cstdio>
#include <mutex>

namespace mmloc {

namespace {
std::mutex g_mu;
WarningHandler g_handler;

const char* kind_name(Warning k) {
    switch (k) {
        case Warning::Convergence: return "convergence";
        case Warning::Clipped: return "clipped";
        case Warning::DroppedPath: return "dropped-path";
    }
    return "warning";
}
}  // namespace

void set_warning_handler(WarningHandler h) {
    std::lock_guard<std::mutex> lk(g_mu);
    g_handler = std::move(h);
}

void warn(Warning kind, const std::string& msg) {
    std::lock_guard<std::mutex> lk(g_mu);
    if (g_handler) {
        g_handler(kind, msg);
        return;
    }
    std::fprintf(stderr, "warning[%s]: %s\n", kind_name(kind), msg.c_str());
}

}  // namespace mmloc
