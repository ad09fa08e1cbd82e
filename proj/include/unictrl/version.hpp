#ifndef UNICTRL_VERSION_HPP
#define UNICTRL_VERSION_HPP

namespace unictrl {

constexpr const char* kToolVersion = "0.1.0";

}

#endif
