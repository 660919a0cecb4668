class Fxdiv(CMakePackage):
    variant("inline_assembly", default=False, description="Use inline assembly")
    variant("tests", default=False, description="Build tests")
    variant("benchmarks", default=False, description="Build benchmarks")

    depends_on("cmake@3.5:", type="build")
    depends_on("c", type="build")
    depends_on("cxx", type="build")

    def cmake_args(self):
        args = [
            self.define_from_variant("FXDIV_USE_INLINE_ASSEMBLY", "inline_assembly"),
            self.define_from_variant("FXDIV_BUILD_TESTS", "tests"),
            self.define_from_variant("FXDIV_BUILD_BENCHMARKS", "benchmarks"),
        ]
        return args
