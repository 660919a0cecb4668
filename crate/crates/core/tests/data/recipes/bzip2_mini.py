from spack.package import *


class Bzip2Mini(MakefilePackage):
    """bzip2 is a freely available high-quality data compressor."""

    homepage = "https://sourceware.org/bzip2/"
    url = "https://sourceware.org/pub/bzip2/bzip2-1.0.8.tar.gz"

    license("bzip2-1.0.6")

    version("1.0.8", sha256="ab5a03176ee106d3f0fa90e381da478ddae405918153cca248e682cd0c4a2269")
    version("1.0.7", sha256="e768a87c5b1a79511499beb41500bcc4caf203726fff46a6f5f9ad27fe08ab2b")

    variant("shared", default=True, description="Enables the build of shared libraries.")
    variant("pic", default=False, description="Build static libraries with PIC")

    depends_on("c", type="build")
    depends_on("diffutils", type="build")

    def install(self, spec, prefix):
        make("install", "PREFIX={0}".format(prefix))
