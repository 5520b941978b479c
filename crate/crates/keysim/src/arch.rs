//! Architecture and calling-convention tables.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::Width;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    X86_64,
    Arm32,
}

impl Arch {
    pub fn word(self) -> Width {
        match self {
            Arch::X86_64 => Width::W64,
            Arch::Arm32 => Width::W32,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Arch::X86_64 => "x86_64",
            Arch::Arm32 => "arm32",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Arch> {
        match tag {
            "x86_64" => Some(Arch::X86_64),
            "arm32" => Some(Arch::Arm32),
            _ => None,
        }
    }

    pub fn default_convention(self) -> CallConv {
        match self {
            Arch::X86_64 => CallConv::Sysv64,
            Arch::Arm32 => CallConv::Aapcs32,
        }
    }

    /// Full (widest) register names, i.e. the keys of a symbolic register file.
    pub fn register_file(self) -> &'static [&'static str] {
        match self {
            Arch::X86_64 => &[
                "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r8", "r9", "r10", "r11",
                "r12", "r13", "r14", "r15",
            ],
            Arch::Arm32 => &[
                "r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8", "r9", "r10", "r11", "r12",
                "sp", "lr", "pc",
            ],
        }
    }

    /// Seed name for the entry value of a register. The stack pointer is
    /// seeded as `sp` on both architectures so stack addresses render the
    /// same way across them.
    pub fn seed_name(self, reg: &str) -> &'static str {
        match (self, reg) {
            (Arch::X86_64, "rsp") | (Arch::Arm32, "sp") => "sp",
            _ => {
                for r in self.register_file() {
                    if *r == reg {
                        return r;
                    }
                }
                "unknown"
            }
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallConv {
    Sysv64,
    Win64,
    Aapcs32,
}

impl CallConv {
    pub fn tag(self) -> &'static str {
        match self {
            CallConv::Sysv64 => "sysv64",
            CallConv::Win64 => "win64",
            CallConv::Aapcs32 => "aapcs32",
        }
    }

    pub fn from_tag(tag: &str) -> Option<CallConv> {
        match tag {
            "sysv64" => Some(CallConv::Sysv64),
            "win64" => Some(CallConv::Win64),
            "aapcs32" => Some(CallConv::Aapcs32),
            _ => None,
        }
    }

    pub fn matches_arch(self, arch: Arch) -> bool {
        match self {
            CallConv::Sysv64 | CallConv::Win64 => arch == Arch::X86_64,
            CallConv::Aapcs32 => arch == Arch::Arm32,
        }
    }

    /// Argument registers in position order; these are seeded `var0..varN`
    /// at function entry.
    pub fn param_registers(self) -> &'static [&'static str] {
        match self {
            CallConv::Sysv64 => &["rdi", "rsi", "rdx", "rcx", "r8", "r9"],
            CallConv::Win64 => &["rcx", "rdx", "r8", "r9"],
            CallConv::Aapcs32 => &["r0", "r1", "r2", "r3"],
        }
    }

    /// Caller-saved registers havocked at a call site.
    pub fn havoc_registers(self) -> &'static [&'static str] {
        match self {
            CallConv::Sysv64 => &["rax", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r10", "r11"],
            CallConv::Win64 => &["rax", "rcx", "rdx", "r8", "r9", "r10", "r11"],
            CallConv::Aapcs32 => &["r0", "r1", "r2", "r3", "r12"],
        }
    }

    pub fn return_register(self) -> &'static str {
        match self {
            CallConv::Sysv64 | CallConv::Win64 => "rax",
            CallConv::Aapcs32 => "r0",
        }
    }

    /// Cap on recovered call arguments.
    pub fn arity_budget(self) -> usize {
        match self {
            CallConv::Sysv64 => 6,
            CallConv::Win64 => 4,
            CallConv::Aapcs32 => 4,
        }
    }
}

impl fmt::Display for CallConv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}
