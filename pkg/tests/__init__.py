#
# License: See LICENSE.md file
#
