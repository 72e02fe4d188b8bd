//! Whole source programs: protocol declarations, placements and the term.

use std::collections::{BTreeMap, BTreeSet};

use crate::chor::{Chor, LocRole};
use crate::names::{Loc, Proc, Role};
use crate::types::GlobalType;

/// A service typing `l̃ : ⟨G|A⟩⟨B̃⟩`: the protocol run by sessions opened by
/// contacting the services at `locs`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Protocol {
    pub name: String,
    /// Service locations, sorted.
    pub locs: Vec<Loc>,
    pub starter: Role,
    /// Location of every non-starter role.
    pub roles: BTreeMap<Role, Loc>,
    pub global: GlobalType,
}

impl Protocol {
    pub fn all_roles(&self) -> BTreeSet<Role> {
        let mut s: BTreeSet<Role> = self.roles.keys().cloned().collect();
        s.insert(self.starter.clone());
        s
    }

    pub fn located_roles(&self) -> BTreeSet<LocRole> {
        self.roles.iter().map(|(r, l)| LocRole { loc: l.clone(), role: r.clone() }).collect()
    }

    /// Does a session start with this starter role and these services
    /// follow this protocol?
    pub fn matches(&self, starter: &Role, services: &[LocRole]) -> bool {
        let set: BTreeSet<LocRole> = services.iter().cloned().collect();
        &self.starter == starter && set.len() == services.len() && set == self.located_roles()
    }

    /// Does this protocol offer every listed located role?
    pub fn offers(&self, services: &[LocRole]) -> bool {
        services.iter().all(|s| self.roles.get(&s.role) == Some(&s.loc))
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Program {
    pub protocols: Vec<Protocol>,
    /// Explicit placements of free processes.
    pub placements: BTreeMap<Proc, Loc>,
    pub chor: Chor,
}

impl Program {
    pub fn protocol_for_start(&self, starter: &Role, services: &[LocRole]) -> Option<&Protocol> {
        self.protocols.iter().find(|p| p.matches(starter, services))
    }

    pub fn protocol_for_acc(&self, services: &[LocRole]) -> Option<&Protocol> {
        self.protocols.iter().find(|p| p.offers(services))
    }

    /// The placement of every free process; unplaced processes default to a
    /// location named after them.
    pub fn placement(&self) -> BTreeMap<Proc, Loc> {
        self.chor
            .free_processes()
            .into_iter()
            .map(|p| {
                let l = self.placements.get(&p).cloned().unwrap_or_else(|| Loc::new(format!("l{}", p.as_str())));
                (p, l)
            })
            .collect()
    }

    /// Every location mentioned by protocols or placements.
    pub fn locations(&self) -> BTreeSet<Loc> {
        let mut s: BTreeSet<Loc> = self.protocols.iter().flat_map(|p| p.locs.iter().cloned()).collect();
        s.extend(self.placement().into_values());
        s
    }
}
