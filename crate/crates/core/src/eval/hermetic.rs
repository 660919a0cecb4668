use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{render_audit_output, AuditFinding, CommandOutput, EvalError, Sandbox, Stage, Step, Workspace};
use crate::recipe::{class_name_for, parse_recipe, Recipe};
use crate::text::sha256_hex;

const KNOWN_PACKAGES: &str = include_str!("../../assets/known_packages.txt");

fn builtin_known() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        KNOWN_PACKAGES
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    })
}

/// Behaviour of the simulated package manager. Everything is decided from the
/// recipe text and this configuration, so repeated runs agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HermeticConfig {
    /// Include the shipped list of common package names.
    pub builtin_packages: bool,
    /// Further names the concretizer accepts (e.g. the knowledge-base names).
    pub known_packages: BTreeSet<String>,
    /// Source URLs containing any of these substrings fail to fetch with 404.
    pub unfetchable: Vec<String>,
    /// Dependency name -> header the build needs from it. Missing the
    /// dependency makes install fail with a missing-header error.
    pub required_deps: BTreeMap<String, String>,
    /// Configure-argument keys the project's CMake rejects.
    pub rejected_cmake_keys: BTreeSet<String>,
    /// When set, install fails with this build output.
    pub compile_error: Option<String>,
    /// Replaces the derived audit findings.
    pub audit_findings: Option<Vec<AuditFinding>>,
    /// Makes the given stage exceed any timeout.
    pub timeout_stage: Option<Stage>,
}

impl Default for HermeticConfig {
    fn default() -> Self {
        Self {
            builtin_packages: true,
            known_packages: BTreeSet::new(),
            unfetchable: Vec::new(),
            required_deps: BTreeMap::new(),
            rejected_cmake_keys: BTreeSet::new(),
            compile_error: None,
            audit_findings: None,
            timeout_stage: None,
        }
    }
}

/// In-process stand-in for the package manager. Load uses the recipe parser,
/// concretize checks dependency names against a known-package universe, and
/// install consults the stubbed fetch and build configuration.
#[derive(Debug, Clone, Default)]
pub struct HermeticSandbox {
    pub config: HermeticConfig,
}

impl HermeticSandbox {
    pub fn new(config: HermeticConfig) -> Self {
        Self { config }
    }
}

impl Sandbox for HermeticSandbox {
    fn id(&self) -> String {
        "hermetic".into()
    }

    fn prepare(&self, package: &str, recipe_text: &str) -> Result<Box<dyn Workspace>, EvalError> {
        Ok(Box::new(HermeticWorkspace {
            config: self.config.clone(),
            package: package.to_string(),
            text: recipe_text.to_string(),
            parsed: parse_recipe(recipe_text),
        }))
    }
}

struct HermeticWorkspace {
    config: HermeticConfig,
    package: String,
    text: String,
    parsed: Result<Recipe, crate::recipe::ParseError>,
}

fn out(exit_code: i32, output: String) -> CommandOutput {
    CommandOutput {
        exit_code,
        output,
        timed_out: false,
        duration: Duration::ZERO,
    }
}

impl HermeticWorkspace {
    fn known(&self, name: &str) -> bool {
        name == self.package
            || self.config.known_packages.contains(name)
            || (self.config.builtin_packages && builtin_known().contains(name))
    }

    fn recipe(&self) -> Option<&Recipe> {
        self.parsed.as_ref().ok().filter(|r| r.class_name == class_name_for(&self.package))
    }

    fn load(&self) -> CommandOutput {
        let pkg = &self.package;
        match &self.parsed {
            Err(e) => out(
                1,
                format!(
                    "==> Error: Traceback (most recent call last):\n  File \"repo/packages/{pkg}/package.py\", line {}\nSyntaxError: {}\n",
                    e.line, e.message
                ),
            ),
            Ok(r) if r.class_name != class_name_for(pkg) => out(
                1,
                format!(
                    "==> Error: No such package class '{}' in repo/packages/{pkg}/package.py (found '{}')\n",
                    class_name_for(pkg),
                    r.class_name
                ),
            ),
            Ok(r) => {
                let mut s = format!("{}:   {pkg}\n\nPreferred version:\n", r.base_classes.join(", "));
                match r.versions.first() {
                    Some(v) => s.push_str(&format!("    {}\n", v.version_string)),
                    None => s.push_str("    None\n"),
                }
                s.push_str("\nVariants:\n");
                for v in &r.variants {
                    s.push_str(&format!("    {}\n", v.name));
                }
                s.push_str("\nDependencies:\n");
                for d in &r.dependencies {
                    s.push_str(&format!("    {}\n", d.name));
                }
                out(0, s)
            }
        }
    }

    fn unknown_deps(&self, r: &Recipe) -> Vec<String> {
        let mut unknown: Vec<String> = r.dependency_names().into_iter().filter(|d| !self.known(d)).collect();
        unknown.dedup();
        unknown
    }

    fn concretize(&self, r: &Recipe) -> CommandOutput {
        let pkg = &self.package;
        if r.versions.is_empty() {
            return out(1, format!("==> Error: There are no valid versions for {pkg} that match ':'\n"));
        }
        let unknown = self.unknown_deps(r);
        if !unknown.is_empty() {
            let mut s = format!("==> Error: {pkg} is unsatisfiable, errors are:\n");
            for d in unknown {
                s.push_str(&format!("  Package '{d}' not found (required by '{pkg}')\n"));
            }
            return out(1, s);
        }
        let v = &r.versions[0].version_string;
        let mut s = format!(
            "Input spec\n--------------------------------\n {pkg}\n\nConcretized\n--------------------------------\n{pkg}@{v}%gcc@11.4.0 arch=linux-ubuntu22.04-x86_64\n"
        );
        for d in r.dependency_names() {
            s.push_str(&format!("    ^{d}\n"));
        }
        out(0, s)
    }

    fn source_url<'a>(&self, r: &'a Recipe) -> Option<&'a str> {
        r.versions
            .first()
            .and_then(|v| v.source_url.as_deref())
            .or_else(|| ["url", "git", "hg", "svn", "list_url"].iter().find_map(|k| r.attributes.get(*k).map(String::as_str)))
    }

    fn install(&self, r: &Recipe) -> CommandOutput {
        let pkg = &self.package;
        let v = r.versions.first().map_or("unknown", |v| v.version_string.as_str());
        let mut s = format!("==> Installing {pkg}-{v}\n==> No binary for {pkg}-{v} found: installing from source\n");
        let url = match self.source_url(r) {
            Some(u) => u,
            None => {
                s.push_str(&format!("==> Error: FetchError: No URL for {pkg}@{v}\n"));
                return out(1, s);
            }
        };
        s.push_str(&format!("==> Fetching {url}\n"));
        if self.config.unfetchable.iter().any(|u| url.contains(u.as_str())) {
            s.push_str("    curl: (22) The requested URL returned error: 404\n");
            s.push_str(&format!("==> Error: FetchError: All fetchers failed for spack-stage-{pkg}-{v}\n"));
            return out(1, s);
        }
        s.push_str(&format!("==> {pkg}: Executing phase: 'cmake'\n"));
        if let Some(key) = r.config_keys.iter().find(|k| self.config.rejected_cmake_keys.contains(*k)) {
            s.push_str(&format!(
                "CMake Error at CMakeLists.txt:1 (message):\n  Unsupported option {key}\n\n-- Configuring incomplete, errors occurred!\n"
            ));
            s.push_str("==> Error: ProcessError: Command exited with status 1:\n    'cmake' '-G' 'Unix Makefiles'\n");
            return out(1, s);
        }
        s.push_str(&format!("==> {pkg}: Executing phase: 'build'\n"));
        let deps = r.dependency_names();
        if let Some((_, header)) = self.config.required_deps.iter().find(|(d, _)| !deps.contains(*d)) {
            s.push_str(&format!(
                "src/main.c:1:10: fatal error: {header}: No such file or directory\ncompilation terminated.\n"
            ));
            s.push_str("make[2]: *** [CMakeFiles/main.dir/build.make:76: main.o] Error 1\n");
            s.push_str("==> Error: ProcessError: Command exited with status 2:\n    'make' '-j8'\n");
            return out(2, s);
        }
        if let Some(err) = &self.config.compile_error {
            s.push_str(err);
            if !err.ends_with('\n') {
                s.push('\n');
            }
            s.push_str("==> Error: ProcessError: Command exited with status 2:\n    'make' '-j8'\n");
            return out(2, s);
        }
        let hash = &sha256_hex(self.text.as_bytes())[..7];
        s.push_str(&format!("==> {pkg}: Executing phase: 'install'\n==> {pkg}: Successfully installed {pkg}-{v}-{hash}\n"));
        out(0, s)
    }

    fn audit(&self, r: &Recipe) -> CommandOutput {
        let findings = match &self.config.audit_findings {
            Some(f) => f.clone(),
            None => {
                let mut f = Vec::new();
                if !r.has_download_directive() {
                    f.push(AuditFinding {
                        check_id: "PKG-DIRECTIVES".into(),
                        message: format!("Package '{}' has no download directive (no url, git or versioned source)", self.package),
                    });
                }
                for d in self.unknown_deps(r) {
                    f.push(AuditFinding {
                        check_id: "PKG-DIRECTIVES".into(),
                        message: format!("'{}' depends on nonexistent package '{d}'", self.package),
                    });
                }
                f
            }
        };
        out(i32::from(!findings.is_empty()), render_audit_output(&findings))
    }
}

impl Workspace for HermeticWorkspace {
    fn id(&self) -> String {
        format!("hermetic/{}", self.package)
    }

    fn run(&mut self, step: Step, timeout: Duration) -> Result<CommandOutput, EvalError> {
        if matches!(step, Step::Stage(s) if Some(s) == self.config.timeout_stage) {
            return Ok(CommandOutput {
                exit_code: -1,
                output: String::new(),
                timed_out: true,
                duration: timeout,
            });
        }
        if step == Step::Stage(Stage::Load) {
            return Ok(self.load());
        }
        // later steps are only reached by loadable recipes
        let Some(r) = self.recipe() else {
            return Ok(self.load());
        };
        Ok(match step {
            Step::Stage(Stage::Concretize) => self.concretize(r),
            Step::Stage(Stage::Install) => self.install(r),
            Step::Audit => self.audit(r),
            Step::Stage(Stage::Load) => unreachable!(),
        })
    }
}
