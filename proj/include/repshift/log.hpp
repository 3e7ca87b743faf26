// Copyright (C) 2026 The repshift Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace repshift {

// Level comes from REPSHIFT_LOG (trace, debug, info, warn, error, critical, off).
// Default is warn so CLI output stays machine-readable.
inline spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
        auto logger = std::make_shared<spdlog::logger>("repshift", sink);
        logger->set_pattern("[%l] %v");
        spdlog::level::level_enum level = spdlog::level::warn;
        if (const char* env = std::getenv("REPSHIFT_LOG")) {
            level = spdlog::level::from_str(env);
        }
        logger->set_level(level);
        return logger;
    }();
    return *instance;
}

}  // namespace repshift
