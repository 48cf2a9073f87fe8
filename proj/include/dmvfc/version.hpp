#pragma once

#ifndef DMVFC_VERSION
#define DMVFC_VERSION "0.0.0"
#endif

namespace dmvfc {

inline constexpr const char* kVersion = DMVFC_VERSION;

}  // namespace dmvfc
