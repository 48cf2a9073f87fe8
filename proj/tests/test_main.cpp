#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "dmvfc/parallel.hpp"

int main(int argc, char** argv) {
    dmvfc::retain_heap_memory();
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
